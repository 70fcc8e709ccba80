#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "moegan/generator.hpp"
#include "moegan/gradcheck.hpp"

#include <cmath>

using namespace moegan;

namespace {

ExpertParams<float> zero_expert(int emb, int hidden) {
  auto z = [&](long r, long c, int rank) { return Tensor<float>::zeros(r, c, rank); };
  ExpertParams<float> e;
  e.w_update = z(hidden, emb, 2);
  e.u_update = z(hidden, hidden, 2);
  e.b_update = z(hidden, 1, 1);
  e.w_reset = z(hidden, emb, 2);
  e.u_reset = z(hidden, hidden, 2);
  e.b_reset = z(hidden, 1, 1);
  e.w_cand = z(hidden, emb, 2);
  e.u_cand = z(hidden, hidden, 2);
  e.b_cand = z(hidden, 1, 1);
  return e;
}

// Raw-Eigen replica of the generator forward pass, kept independent of the
// tape engine; used as the enumeration oracle for likelihoods.
Eigen::VectorXd oracle_step_probs(const GeneratorParams<float>& g,
                                  std::vector<Eigen::VectorXd>& hidden,
                                  const Eigen::VectorXd& x) {
  auto sig = [](const Eigen::VectorXd& v) {
    return Eigen::VectorXd(v.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); }));
  };
  Eigen::VectorXd mean_rep = Eigen::VectorXd::Zero(g.hidden_dim);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const auto& e = g.experts[i];
    Eigen::MatrixXd wu = e.w_update.value().cast<double>(), uu = e.u_update.value().cast<double>();
    Eigen::MatrixXd wr = e.w_reset.value().cast<double>(), ur = e.u_reset.value().cast<double>();
    Eigen::MatrixXd wc = e.w_cand.value().cast<double>(), uc = e.u_cand.value().cast<double>();
    Eigen::VectorXd bu = e.b_update.value().cast<double>(), br = e.b_reset.value().cast<double>(),
                    bc = e.b_cand.value().cast<double>();
    Eigen::VectorXd z = sig(wu * x + uu * hidden[i] + bu);
    Eigen::VectorXd r = sig(wr * x + ur * hidden[i] + br);
    Eigen::VectorXd n = (wc * x + uc * (r.cwiseProduct(hidden[i])) + bc).array().tanh();
    hidden[i] = z.cwiseProduct(hidden[i]) + (Eigen::VectorXd::Ones(z.size()) - z).cwiseProduct(n);
    mean_rep += hidden[i];
  }
  mean_rep /= static_cast<double>(hidden.size());
  Eigen::VectorXd logits = g.proj.value().cast<double>() * mean_rep;
  Eigen::ArrayXd ex = (logits.array() - logits.maxCoeff()).exp();
  return (ex / ex.sum()).matrix();
}

}  // namespace

TEST_CASE("GRU with zero parameters halves the hidden state") {
  auto e = zero_expert(3, 4);
  auto h = Tensor<float>::vector({1, 2, -3, 4});
  auto x = Tensor<float>::vector({5, 6, 7});
  auto h2 = expert_step(e, h, x);
  CHECK(h2.rows() == 4);
  for (long i = 0; i < 4; ++i) CHECK(h2.value()(i, 0) == doctest::Approx(0.5f * h.value()(i, 0)));
}

TEST_CASE("GRU at zero hidden state and zero input stays at zero") {
  RngStream rng(11);
  auto e = make_expert<float>(rng, 3, 4);
  e.b_update.value().setZero();
  e.b_reset.value().setZero();
  e.b_cand.value().setZero();
  auto h2 = expert_step(e, Tensor<float>::zeros(4, 1, 1), Tensor<float>::zeros(3, 1, 1));
  CHECK(h2.value().cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("expert_step rejects mismatched dimensions") {
  auto e = zero_expert(3, 4);
  CHECK_THROWS_AS(expert_step(e, Tensor<float>::zeros(5, 1, 1), Tensor<float>::zeros(3, 1, 1)),
                  ShapeError);
  CHECK_THROWS_AS(expert_step(e, Tensor<float>::zeros(4, 1, 1), Tensor<float>::zeros(2, 1, 1)),
                  ShapeError);
}

TEST_CASE("aggregate") {
  SUBCASE("single expert is the identity") {
    auto v = Tensor<float>::vector({1.5f, -2});
    auto y = aggregate<float>({v});
    CHECK(y.value()(0, 0) == doctest::Approx(1.5));
    CHECK(y.value()(1, 0) == doctest::Approx(-2));
  }
  SUBCASE("mean of two vectors") {
    auto y = aggregate<float>({Tensor<float>::vector({1, 2}), Tensor<float>::vector({3, 4})});
    CHECK(y.value()(0, 0) == doctest::Approx(2));
    CHECK(y.value()(1, 0) == doctest::Approx(3));
  }
  SUBCASE("identical experts collapse to one") {
    auto v = Tensor<float>::vector({0.25f, -1});
    auto y = aggregate<float>({v, v, v});
    CHECK(y.value() == v.value());
  }
  SUBCASE("empty list errors") { CHECK_THROWS_AS(aggregate<float>({}), ShapeError); }
}

TEST_CASE("token_distribution") {
  RngStream rng(5);
  SUBCASE("zero projection gives the uniform distribution") {
    auto g = make_generator<float>(8, 3, 4, 1, false, rng);
    g.proj.value().setZero();
    auto pi = token_distribution(g, Tensor<float>::vector({1, 2, 3, 4}));
    for (long i = 0; i < 8; ++i) CHECK(pi.value()(i, 0) == doctest::Approx(0.125));
  }
  SUBCASE("logits (ln 2, 0) give (2/3, 1/3)") {
    GeneratorParams<float> g;
    g.vocab_size = 2;
    g.hidden_dim = 1;
    Mat<float> w(2, 1);
    w << std::log(2.0f), 0.0f;
    g.proj = Tensor<float>::matrix(w);
    auto pi = token_distribution(g, Tensor<float>::vector({1}));
    CHECK(pi.value()(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(pi.value()(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
  SUBCASE("random outputs are probability vectors") {
    auto g = make_generator<float>(16, 3, 4, 2, false, rng);
    for (int i = 0; i < 20; ++i) {
      Mat<float> y(4, 1);
      for (long j = 0; j < 4; ++j) y(j, 0) = static_cast<float>(rng.uniform() * 4 - 2);
      auto pi = token_distribution(g, Tensor<float>::vector(y));
      CHECK(pi.value().minCoeff() >= 0.0f);
      CHECK(pi.value().sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("gumbel noise transform") {
  SUBCASE("u = 1/e is the fixed point g = 0") {
    double u = 1.0 / std::exp(1.0);
    CHECK(std::abs(-std::log(-std::log(u))) < 1e-12);
  }
  SUBCASE("clamping keeps extreme draws finite") {
    double floor_g = -std::log(-std::log(RngStream::kUniformClamp));
    CHECK(std::isfinite(floor_g));
    CHECK(floor_g < -2.0);
  }
  SUBCASE("sample mean approaches the Euler-Mascheroni constant") {
    RngStream rng(123);
    double acc = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += rng.gumbel();
    CHECK(acc / n == doctest::Approx(0.5772).epsilon(0.035));
  }
}

TEST_CASE("gumbel_max") {
  SUBCASE("zero noise picks the argmax of pi") {
    auto pi = Tensor<float>::vector({0.7f, 0.2f, 0.1f});
    auto g = Tensor<float>::vector({0, 0, 0});
    auto y = gumbel_max(pi, g);
    CHECK(y.value()(0, 0) == 1.0f);
    CHECK(y.value().sum() == 1.0f);
  }
  SUBCASE("empirical frequencies match pi (Gumbel-Max theorem)") {
    RngStream rng(77);
    auto pi = Tensor<float>::vector({0.5f, 0.3f, 0.2f});
    const int n = 100000;
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) counts[gumbel_argmax(pi, gumbel_noise<float>(3, rng))]++;
    CHECK(std::abs(counts[0] / double(n) - 0.5) < 0.01);
    CHECK(std::abs(counts[1] / double(n) - 0.3) < 0.01);
    CHECK(std::abs(counts[2] / double(n) - 0.2) < 0.01);
  }
  SUBCASE("exactly one hot") {
    RngStream rng(9);
    auto pi = softmax(Tensor<float>::vector({0.3f, -1, 2, 0.1f}));
    auto y = gumbel_max(pi, gumbel_noise<float>(4, rng));
    int ones = 0;
    for (long i = 0; i < 4; ++i)
      if (y.value()(i, 0) == 1.0f) ++ones;
    CHECK(ones == 1);
    CHECK(y.value().sum() == 1.0f);
  }
}

TEST_CASE("gumbel_softmax") {
  RngStream rng(31);
  SUBCASE("tau -> infinity approaches uniform") {
    for (int trial = 0; trial < 20; ++trial) {
      Mat<float> raw(10, 1);
      for (long j = 0; j < 10; ++j) raw(j, 0) = static_cast<float>(rng.uniform() * 2 - 1);
      auto pi = softmax(Tensor<float>::matrix(raw));
      auto y = gumbel_softmax(pi, gumbel_noise<float>(10, rng), 100.0f);
      CHECK(y.value().maxCoeff() - y.value().minCoeff() < 0.01f);
    }
  }
  SUBCASE("tau -> 0 approaches the one-hot of gumbel_max") {
    for (int i = 0; i < 50; ++i) {
      Mat<float> raw(5, 1);
      for (long j = 0; j < 5; ++j) raw(j, 0) = static_cast<float>(rng.uniform() * 4 - 2);
      auto pi = softmax(Tensor<float>::matrix(raw));
      auto g = gumbel_noise<float>(5, rng);
      auto y = gumbel_softmax(pi, g, 0.001f);
      long soft_arg;
      y.value().col(0).maxCoeff(&soft_arg);
      CHECK(static_cast<int>(soft_arg) == gumbel_argmax(pi, g));
      CHECK(y.value().maxCoeff() > 0.999f);
    }
  }
  SUBCASE("rows always sum to one") {
    for (float tau : {0.01f, 0.5f, 1.0f, 10.0f}) {
      auto pi = softmax(Tensor<float>::vector({0.2f, 1, -1}));
      auto y = gumbel_softmax(pi, gumbel_noise<float>(3, rng), tau);
      CHECK(y.value().sum() == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(y.value().minCoeff() >= 0.0f);
    }
  }
  SUBCASE("non-positive temperature errors") {
    auto pi = Tensor<float>::vector({0.5f, 0.5f});
    auto g = Tensor<float>::vector({0, 0});
    CHECK_THROWS_AS(gumbel_softmax(pi, g, 0.0f), DomainError);
    CHECK_THROWS_AS(gumbel_softmax(pi, g, -1.0f), DomainError);
  }
}

TEST_CASE("argmax invariance between gumbel_max and gumbel_softmax") {
  RngStream rng(404);
  for (int i = 0; i < 200; ++i) {
    Mat<float> raw(6, 1);
    for (long j = 0; j < 6; ++j) raw(j, 0) = static_cast<float>(rng.uniform() * 6 - 3);
    auto pi = softmax(Tensor<float>::matrix(raw));
    auto g = gumbel_noise<float>(6, rng);
    float tau = static_cast<float>(rng.uniform() * 5 + 0.01);
    auto y = gumbel_softmax(pi, g, tau);
    long soft_arg;
    y.value().col(0).maxCoeff(&soft_arg);
    CHECK(static_cast<int>(soft_arg) == gumbel_argmax(pi, g));
  }
}

TEST_CASE("generate_soft") {
  RngStream rng(2024);
  auto g = make_generator<float>(6, 3, 4, 2, false, rng);
  SUBCASE("every row sums to one") {
    RngStream noise(1);
    auto seq = generate_soft(g, 7, 1.0f, noise);
    CHECK(seq.rows() == 7);
    CHECK(seq.cols() == 6);
    for (long t = 0; t < 7; ++t)
      CHECK(seq.value().row(t).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("gradient w.r.t. the output projection passes the checking oracle") {
    Mat<float> noise(3, 6);
    RngStream nrng(55);
    for (long t = 0; t < 3; ++t)
      for (long v = 0; v < 6; ++v) noise(t, v) = static_cast<float>(nrng.gumbel());
    RngStream prng(66);
    Mat<float> pick(3, 6);
    for (long t = 0; t < 3; ++t)
      for (long v = 0; v < 6; ++v) pick(t, v) = static_cast<float>(prng.uniform() * 2 - 1);

    auto fn = [&](auto x) {
      using T = typename std::decay_t<decltype(x)>::scalar_type;
      auto gp = cast_generator<T>(g);
      gp.proj = x;
      auto seq = generate_soft_with_noise(gp, 3, T(1), noise.cast<T>().eval());
      return sum(mul(seq, Tensor<T>::matrix(pick.cast<T>())));
    };
    CHECK(finite_difference_check(fn, g.proj, 1e-4) < 1e-3);
  }
  SUBCASE("two tied experts equal the single-expert rollout") {
    RngStream r2(3);
    auto base = make_generator<float>(5, 3, 4, 1, false, r2);
    GeneratorParams<float> twin = base;
    twin.experts.push_back(base.experts[0]);

    Mat<float> noise(4, 5);
    RngStream nrng(8);
    for (long t = 0; t < 4; ++t)
      for (long v = 0; v < 5; ++v) noise(t, v) = static_cast<float>(nrng.gumbel());
    auto a = generate_soft_with_noise(base, 4, 1.0f, noise);
    auto b = generate_soft_with_noise(twin, 4, 1.0f, noise);
    CHECK(a.value() == b.value());
  }
}

TEST_CASE("generate_hard") {
  RngStream rng(616);
  auto g = make_generator<float>(9, 3, 4, 2, false, rng);
  SUBCASE("token ids stay in range and reruns are deterministic") {
    RngStream s1(42), s2(42);
    auto a = generate_hard(g, 10, s1);
    auto b = generate_hard(g, 10, s2);
    CHECK(a == b);
    for (int id : a) {
      CHECK(id >= 0);
      CHECK(id < 9);
    }
  }
  SUBCASE("vocabulary of one yields all zeros") {
    RngStream r2(1);
    auto tiny = make_generator<float>(1, 2, 2, 1, false, r2);
    RngStream s(7);
    auto seq = generate_hard(tiny, 5, s);
    for (int id : seq) CHECK(id == 0);
  }
}

TEST_CASE("one-step hard sampling matches pi within three standard errors") {
  RngStream rng(5006);
  auto pi = Tensor<float>::vector({0.45f, 0.35f, 0.2f});
  const int n = 20000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) counts[gumbel_argmax(pi, gumbel_noise<float>(3, rng))]++;
  for (int k = 0; k < 3; ++k) {
    double p = pi.value()(k, 0);
    double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(counts[k] / double(n) - p) < 3 * se);
  }
}

TEST_CASE("sequence_log_likelihood") {
  RngStream rng(99);
  SUBCASE("uniform model scores -log|V| per token") {
    auto g = make_generator<float>(8, 3, 4, 1, false, rng);
    g.proj.value().setZero();
    auto ll = sequence_log_likelihood(g, {1, 5, 2, 7});
    CHECK(ll.item() == doctest::Approx(-std::log(8.0)).epsilon(1e-6));
  }
  SUBCASE("single token is the log of one softmax entry") {
    auto g = make_generator<float>(4, 3, 4, 1, false, rng);
    auto ll = sequence_log_likelihood(g, {2});
    GeneratorState<float> st = initial_state(g);
    auto pi = generator_step(g, st, g.start);
    CHECK(ll.item() == doctest::Approx(std::log(pi.value()(2, 0))).epsilon(1e-5));
  }
  SUBCASE("invalid token id errors") {
    auto g = make_generator<float>(4, 3, 4, 1, false, rng);
    CHECK_THROWS_AS(sequence_log_likelihood(g, {0, 4}), DomainError);
    CHECK_THROWS_AS(sequence_log_likelihood(g, {}), DomainError);
  }
}

TEST_CASE("likelihoods match a brute-force enumeration oracle and sum to one") {
  RngStream rng(314);
  auto g = make_generator<float>(2, 3, 3, 2, false, rng);
  const int len = 3;

  double total_prob = 0.0;
  for (int mask = 0; mask < (1 << len); ++mask) {
    TokenSequence seq;
    for (int t = 0; t < len; ++t) seq.push_back((mask >> t) & 1);

    // Independent raw-Eigen chain-rule product.
    std::vector<Eigen::VectorXd> hidden(2, Eigen::VectorXd::Zero(3));
    Eigen::VectorXd x = g.start.value().cast<double>();
    double log_prob = 0;
    for (int t = 0; t < len; ++t) {
      Eigen::VectorXd pi = oracle_step_probs(g, hidden, x);
      log_prob += std::log(pi(seq[t]));
      x = g.embedding.value().row(seq[t]).transpose().cast<double>();
    }

    auto ll = sequence_log_likelihood(g, seq);
    CHECK(static_cast<double>(ll.item()) * len == doctest::Approx(log_prob).epsilon(1e-4));
    total_prob += std::exp(log_prob);
  }
  CHECK(total_prob == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("hidden states stay finite across a long rollout") {
  RngStream rng(2718);
  auto g = make_generator<float>(12, 4, 6, 3, false, rng);
  GeneratorState<float> st = initial_state(g);
  CHECK(st.hidden.size() == 3);
  Tensor<float> x = g.start;
  RngStream noise(5);
  for (int t = 0; t < 64; ++t) {
    auto pi = generator_step(g, st, x);
    for (const auto& h : st.hidden) CHECK(h.value().allFinite());
    x = row_vec(g.embedding, gumbel_argmax(pi, gumbel_noise<float>(12, noise)));
  }
  CHECK(st.t == 64);
}
