#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "moegan/gradcheck.hpp"
#include "moegan/objectives.hpp"

#include <cmath>

using namespace moegan;

TEST_CASE("mle_loss") {
  RngStream rng(10);
  SUBCASE("uniform generator scores log|V|") {
    auto g = make_generator<float>(8, 3, 4, 1, false, rng);
    g.proj.value().setZero();
    auto loss = mle_loss(g, {{1, 2, 3}, {7, 0, 5}});
    CHECK(loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-6));
  }
  SUBCASE("batch loss is the mean of per-sequence losses") {
    auto g = make_generator<float>(6, 3, 4, 2, false, rng);
    TokenSequence a = {1, 2, 3, 4}, b = {5, 0, 1, 2};
    float la = -sequence_log_likelihood(g, a).item();
    float lb = -sequence_log_likelihood(g, b).item();
    CHECK(mle_loss(g, {a, b}).item() == doctest::Approx(0.5 * (la + lb)).epsilon(1e-6));
  }
  SUBCASE("loss is non-negative for any model") {
    auto g = make_generator<float>(6, 3, 4, 2, false, rng);
    CHECK(mle_loss(g, {{0, 1, 2}}).item() >= 0.0f);
  }
  SUBCASE("empty batch errors") {
    auto g = make_generator<float>(6, 3, 4, 1, false, rng);
    CHECK_THROWS_AS(mle_loss(g, {}), DomainError);
  }
}

TEST_CASE("fsa_distance on constructed feature stubs") {
  SUBCASE("identical centroids give zero") {
    Mat<float> f(2, 4);
    f << 1, 2, 3, 4, 5, 6, 7, 8;
    auto d = fsa_distance_features(Tensor<float>::matrix(f), Tensor<float>::matrix(f));
    CHECK(d.item() <= 1e-6f);
  }
  SUBCASE("hand L2 between centroids (3,4,0...) vs zero is 5") {
    Mat<float> real = Mat<float>::Zero(2, 5);
    real(0, 0) = 2;
    real(1, 0) = 4;  // centroid 3
    real(0, 1) = 4;
    real(1, 1) = 4;  // centroid 4
    Mat<float> fake = Mat<float>::Zero(3, 5);
    auto d = fsa_distance_features(Tensor<float>::matrix(real), Tensor<float>::matrix(fake));
    CHECK(d.item() == doctest::Approx(5.0).epsilon(1e-6));
  }
  SUBCASE("symmetric in its arguments") {
    RngStream rng(4);
    Mat<float> a(3, 6), b(4, 6);
    for (long i = 0; i < a.size(); ++i) a.data()[i] = static_cast<float>(rng.uniform());
    for (long i = 0; i < b.size(); ++i) b.data()[i] = static_cast<float>(rng.uniform());
    auto ab = fsa_distance_features(Tensor<float>::matrix(a), Tensor<float>::matrix(b));
    auto ba = fsa_distance_features(Tensor<float>::matrix(b), Tensor<float>::matrix(a));
    CHECK(ab.item() == doctest::Approx(ba.item()));
    CHECK(ab.item() >= 0.0f);
  }
}

TEST_CASE("fsa_distance through the frozen encoder") {
  RngStream rng(6);
  auto disc = make_feature_net<float>(6, rng);
  auto frozen = copy_to_auxiliary(disc);
  std::vector<TokenSequence> real = {{1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}};
  SUBCASE("identical batches give zero") {
    std::vector<SoftSequence<float>> fake;
    for (const auto& seq : real) fake.push_back(onehot_rows<float>(seq, 6));
    CHECK(fsa_distance(frozen, real, fake).item() <= 1e-6f);
  }
  SUBCASE("different batch sizes are accepted") {
    std::vector<SoftSequence<float>> fake = {
        Tensor<float>::matrix(Mat<float>::Constant(5, 6, 1.0f / 6.0f))};
    CHECK(fsa_distance(frozen, real, fake).item() >= 0.0f);
  }
  SUBCASE("empty batches error") {
    std::vector<SoftSequence<float>> fake;
    CHECK_THROWS_AS(fsa_distance(frozen, real, fake), DomainError);
  }
}

TEST_CASE("relativistic_gap") {
  SUBCASE("hand subtraction on stub logits") {
    auto real = Tensor<float>::vector({2, 3});
    auto fake = Tensor<float>::vector({1, 5});
    auto gap = sub(real, fake);
    CHECK(gap.value()(0, 0) == doctest::Approx(1));
    CHECK(gap.value()(1, 0) == doctest::Approx(-2));
  }
  RngStream rng(9);
  auto disc = make_feature_net<float>(6, rng);
  std::vector<TokenSequence> batch = {{1, 2, 3, 4, 5}, {2, 3, 4, 5, 1}};
  SUBCASE("identical real and fake batches give zero gap") {
    auto gap = relativistic_gap(disc, batch, batch);
    CHECK(gap.value().cwiseAbs().maxCoeff() == 0.0f);
  }
  SUBCASE("a constant-bias discriminator gives zero gap") {
    disc.head_w.value().setZero();
    disc.head_b.value()(0, 0) = 3.5f;
    std::vector<TokenSequence> other = {{5, 5, 5, 5, 5}, {1, 1, 1, 1, 1}};
    auto gap = relativistic_gap(disc, batch, other);
    CHECK(gap.value().cwiseAbs().maxCoeff() == 0.0f);
  }
  SUBCASE("size mismatch errors") {
    std::vector<TokenSequence> one = {{1, 2, 3, 4, 5}};
    CHECK_THROWS_AS(relativistic_gap(disc, batch, one), ShapeError);
  }
}

TEST_CASE("discriminator_loss") {
  SUBCASE("zero gap gives ln 2") {
    auto loss = discriminator_loss(Tensor<float>::vector({0, 0, 0}));
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("large positive gap drives the loss to zero") {
    CHECK(discriminator_loss(Tensor<float>::vector({50, 60})).item() < 1e-6f);
    CHECK(discriminator_loss(Tensor<float>::vector({500})).item() >= 0.0f);
  }
  SUBCASE("gap ln 3 gives -ln 0.75") {
    auto loss = discriminator_loss(Tensor<float>::vector({std::log(3.0f)}));
    CHECK(loss.item() == doctest::Approx(-std::log(0.75)).epsilon(1e-6));
  }
  SUBCASE("positive and monotonically decreasing in each gap entry") {
    RngStream rng(2);
    for (int i = 0; i < 50; ++i) {
      float d = static_cast<float>(rng.uniform() * 20 - 10);
      float ld = discriminator_loss(Tensor<float>::vector({d})).item();
      float ld2 = discriminator_loss(Tensor<float>::vector({d + 0.1f})).item();
      CHECK(ld > 0.0f);
      CHECK(ld2 < ld);
    }
  }
  SUBCASE("extreme negative gaps stay finite (stable log-sigmoid)") {
    auto loss = discriminator_loss(Tensor<float>::vector({-80}));
    CHECK(std::isfinite(loss.item()));
    CHECK(loss.item() == doctest::Approx(80.0).epsilon(1e-3));
  }
}

TEST_CASE("generator_loss") {
  SUBCASE("zero gap and zero fsa give -ln 2") {
    auto gap = Tensor<float>::vector({0, 0});
    auto fsa = Tensor<float>::scalar(0);
    CHECK(generator_loss(gap, fsa).item() == doctest::Approx(-std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("fsa 5 with zero gap gives 5 - ln 2") {
    auto lg = generator_loss(Tensor<float>::vector({0}), Tensor<float>::scalar(5));
    CHECK(lg.item() == doctest::Approx(5.0 - std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("L_G - fsa = -L_D holds as the exact recomposition for any shared batch") {
    RngStream rng(77);
    for (int i = 0; i < 20; ++i) {
      Mat<float> g(4, 1);
      for (long j = 0; j < 4; ++j) g(j, 0) = static_cast<float>(rng.uniform() * 8 - 4);
      auto gap = Tensor<float>::matrix(g);
      gap.node()->rank = 1;
      float fsa = static_cast<float>(rng.uniform() * 3);
      float lg = generator_loss(gap, Tensor<float>::scalar(fsa)).item();
      float ld = discriminator_loss(gap).item();
      CHECK(lg == -ld + fsa);  // bitwise: same composition
    }
  }
  SUBCASE("multiplier zero removes the fsa term") {
    auto gap = Tensor<float>::vector({1.5f});
    auto with = generator_loss(gap, Tensor<float>::scalar(9), 0.0f);
    auto without = generator_loss(gap, Tensor<float>::scalar(0), 1.0f);
    CHECK(with.item() == without.item());
  }
}

TEST_CASE("generator loss pushes fake logits upward") {
  // dL_G / dH(fake_j) < 0 on a stub: gap = real - fake enters -L_D.
  auto fake = Tensor<float>::vector({0.3f, -1.2f, 2.0f}, true);
  auto real = Tensor<float>::vector({0.5f, 0.5f, 0.5f});
  Tape<float> tape;
  auto gap = sub(real, fake);
  auto lg = generator_loss(gap, Tensor<float>::scalar(0));
  tape.backward(lg);
  for (long j = 0; j < 3; ++j) CHECK(fake.grad()(j, 0) < 0.0f);
}

TEST_CASE("update scoping: no cross-network parameters in gradient maps") {
  RngStream rng(123);
  auto gen = make_generator<float>(6, 3, 4, 2, false, rng);
  auto disc = make_feature_net<float>(6, rng);
  auto gen_params = gen.registry();
  auto disc_params = disc.registry();
  std::vector<TokenSequence> real = {{1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}};

  SUBCASE("generator step: discriminator constants, generator gradients flow") {
    auto frozen = copy_to_auxiliary(disc);
    FrozenScope<float> hold(disc_params);
    Tape<float> tape;
    RngStream noise(5);
    std::vector<SoftSequence<float>> fake;
    for (int i = 0; i < 2; ++i) fake.push_back(generate_soft(gen, 5, 1.0f, noise));
    auto gap = relativistic_gap(disc, real, fake);
    auto fsa = fsa_distance(frozen, real, fake);
    auto lg = generator_loss(gap, fsa);
    auto grads = tape.backward(lg, gen_params);
    for (const auto& [name, g] : grads) CHECK(name.rfind("gen/", 0) == 0);
    for (const auto& [name, t] : disc_params.items()) CHECK_FALSE(t.has_grad());
    float total = 0;
    for (const auto& [name, g] : grads) total += g.value().cwiseAbs().sum();
    CHECK(total > 0.0f);
  }

  SUBCASE("discriminator step: generator untouched") {
    std::vector<SoftSequence<float>> fake;
    RngStream noise(5);
    // Rollout outside any tape: the fake batch arrives as constants.
    for (int i = 0; i < 2; ++i) fake.push_back(generate_soft(gen, 5, 1.0f, noise));
    Tape<float> tape;
    auto gap = relativistic_gap(disc, real, fake);
    auto ld = discriminator_loss(gap);
    auto grads = tape.backward(ld, disc_params);
    for (const auto& [name, g] : grads) CHECK(name.rfind("disc/", 0) == 0);
    for (const auto& [name, t] : gen_params.items()) CHECK_FALSE(t.has_grad());
    float total = 0;
    for (const auto& [name, g] : grads) total += g.value().cwiseAbs().sum();
    CHECK(total > 0.0f);
  }
}

TEST_CASE("composed losses pass the checking oracle") {
  RngStream rng(31);
  auto gen = make_generator<float>(5, 3, 3, 2, false, rng);
  auto disc = make_feature_net<float>(5, rng);
  auto frozen = copy_to_auxiliary(disc);
  std::vector<TokenSequence> real = {{1, 2, 3, 4, 0}, {4, 3, 2, 1, 0}};

  Mat<float> noise(5, 5);
  RngStream nrng(8);
  for (long t = 0; t < 5; ++t)
    for (long v = 0; v < 5; ++v) noise(t, v) = static_cast<float>(nrng.gumbel());

  // d(L_G)/d(W_G) through the rollout, the discriminator, and the frozen
  // encoder all at once.
  auto fn = [&](auto x) {
    using T = typename std::decay_t<decltype(x)>::scalar_type;
    auto gp = cast_generator<T>(gen);
    gp.proj = x;
    auto dp = cast_feature_net<T>(disc);
    auto fp = cast_feature_net<T>(frozen);
    std::vector<SoftSequence<T>> fake;
    fake.push_back(generate_soft_with_noise(gp, 5, T(1), noise.cast<T>().eval()));
    fake.push_back(fake[0]);
    auto gap = relativistic_gap(dp, real, fake);
    auto fsa = fsa_distance(fp, real, fake);
    return generator_loss(gap, fsa);
  };
  CHECK(finite_difference_check(fn, gen.proj, 1e-4) < 1e-3);
}
