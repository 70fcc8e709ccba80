#pragma once

// Mixture-of-experts autoregressive generator. Each expert is a GRU cell;
// per-step expert representations are averaged and projected through a
// shared output matrix into token probabilities. Hard sampling uses
// Gumbel-Max, differentiable sampling uses the Gumbel-Softmax relaxation,
// and the next-step input is the noise-weighted mix of embedding rows.

#include "moegan/rng.hpp"
#include "moegan/tensor.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace moegan {

using TokenSequence = std::vector<int>;

// A soft sequence is an L x |V| matrix whose rows are probability vectors.
template <typename S>
using SoftSequence = Tensor<S>;

inline constexpr double kLogFloor = 1e-20;

template <typename S>
struct ExpertParams {
  Tensor<S> w_update, u_update, b_update;
  Tensor<S> w_reset, u_reset, b_reset;
  Tensor<S> w_cand, u_cand, b_cand;
};

template <typename S>
struct GeneratorParams {
  Tensor<S> embedding;  // |V| x d_emb
  std::vector<ExpertParams<S>> experts;
  Tensor<S> proj;   // W_G: |V| x D_g
  Tensor<S> start;  // learned start embedding z: d_emb
  int vocab_size = 0;
  int emb_dim = 0;
  int hidden_dim = 0;
  bool shared_experts = false;

  int n_experts() const { return static_cast<int>(experts.size()); }

  ParamRegistry<S> registry(const std::string& prefix = "gen") const {
    ParamRegistry<S> r;
    r.add(prefix + "/embedding", embedding);
    r.add(prefix + "/start", start);
    r.add(prefix + "/proj", proj);
    for (std::size_t i = 0; i < experts.size(); ++i) {
      const auto& e = experts[i];
      std::string p = prefix + "/expert" + std::to_string(i);
      r.add(p + "/w_update", e.w_update);
      r.add(p + "/u_update", e.u_update);
      r.add(p + "/b_update", e.b_update);
      r.add(p + "/w_reset", e.w_reset);
      r.add(p + "/u_reset", e.u_reset);
      r.add(p + "/b_reset", e.b_reset);
      r.add(p + "/w_cand", e.w_cand);
      r.add(p + "/u_cand", e.u_cand);
      r.add(p + "/b_cand", e.b_cand);
    }
    return r;
  }
};

template <typename S>
struct GeneratorState {
  std::vector<Tensor<S>> hidden;  // one D_g vector per expert
  int t = 0;
};

namespace detail {
template <typename S>
Tensor<S> uniform_init(RngStream& rng, long rows, long cols, double scale, int rank = 2) {
  Mat<S> m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j)
      m(i, j) = static_cast<S>((rng.uniform() * 2.0 - 1.0) * scale);
  return Tensor<S>::make(std::move(m), rank, true);
}
}  // namespace detail

template <typename S>
ExpertParams<S> make_expert(RngStream& rng, int emb_dim, int hidden_dim) {
  double ws = 1.0 / std::sqrt(static_cast<double>(emb_dim));
  double us = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  auto zero_bias = [&] { return Tensor<S>::zeros(hidden_dim, 1, 1, true); };
  ExpertParams<S> e;
  e.w_update = detail::uniform_init<S>(rng, hidden_dim, emb_dim, ws);
  e.u_update = detail::uniform_init<S>(rng, hidden_dim, hidden_dim, us);
  e.b_update = zero_bias();
  e.w_reset = detail::uniform_init<S>(rng, hidden_dim, emb_dim, ws);
  e.u_reset = detail::uniform_init<S>(rng, hidden_dim, hidden_dim, us);
  e.b_reset = zero_bias();
  e.w_cand = detail::uniform_init<S>(rng, hidden_dim, emb_dim, ws);
  e.u_cand = detail::uniform_init<S>(rng, hidden_dim, hidden_dim, us);
  e.b_cand = zero_bias();
  return e;
}

template <typename S>
GeneratorParams<S> make_generator(int vocab_size, int emb_dim, int hidden_dim, int n_experts,
                                  bool shared_experts, RngStream& rng) {
  if (vocab_size < 1 || n_experts < 1) throw DomainError("make_generator: sizes must be positive");
  GeneratorParams<S> g;
  g.vocab_size = vocab_size;
  g.emb_dim = emb_dim;
  g.hidden_dim = hidden_dim;
  g.shared_experts = shared_experts;
  g.embedding = detail::uniform_init<S>(rng, vocab_size, emb_dim, 0.1);
  g.start = detail::uniform_init<S>(rng, emb_dim, 1, 0.1, 1);
  g.proj = detail::uniform_init<S>(rng, vocab_size, hidden_dim, 1.0 / std::sqrt(hidden_dim));
  g.experts.push_back(make_expert<S>(rng, emb_dim, hidden_dim));
  for (int i = 1; i < n_experts; ++i)
    g.experts.push_back(shared_experts ? g.experts[0] : make_expert<S>(rng, emb_dim, hidden_dim));
  return g;
}

template <typename To, typename From>
ExpertParams<To> cast_expert(const ExpertParams<From>& e) {
  return {cast<To>(e.w_update), cast<To>(e.u_update), cast<To>(e.b_update),
          cast<To>(e.w_reset),  cast<To>(e.u_reset),  cast<To>(e.b_reset),
          cast<To>(e.w_cand),   cast<To>(e.u_cand),   cast<To>(e.b_cand)};
}

// Detached scalar-type conversion of a whole generator (gradient-check probes
// re-run the rollout in double).
template <typename To, typename From>
GeneratorParams<To> cast_generator(const GeneratorParams<From>& g) {
  GeneratorParams<To> out;
  out.embedding = cast<To>(g.embedding);
  out.proj = cast<To>(g.proj);
  out.start = cast<To>(g.start);
  for (const auto& e : g.experts) out.experts.push_back(cast_expert<To>(e));
  out.vocab_size = g.vocab_size;
  out.emb_dim = g.emb_dim;
  out.hidden_dim = g.hidden_dim;
  out.shared_experts = g.shared_experts;
  return out;
}

template <typename S>
GeneratorState<S> initial_state(const GeneratorParams<S>& params) {
  GeneratorState<S> st;
  for (int i = 0; i < params.n_experts(); ++i)
    st.hidden.push_back(Tensor<S>::zeros(params.hidden_dim, 1, 1));
  return st;
}

// One GRU cell update. The new hidden state doubles as the expert's emitted
// representation r_i^t.
template <typename S>
Tensor<S> expert_step(const ExpertParams<S>& e, const Tensor<S>& h, const Tensor<S>& x_emb) {
  if (h.rows() != e.u_update.rows())
    throw ShapeError("expert_step: hidden size mismatch (" + std::to_string(h.rows()) + " vs " +
                     std::to_string(e.u_update.rows()) + ")");
  if (x_emb.rows() != e.w_update.cols())
    throw ShapeError("expert_step: input size mismatch (" + std::to_string(x_emb.rows()) +
                     " vs " + std::to_string(e.w_update.cols()) + ")");
  auto z = sigmoid(add(add(matmul(e.w_update, x_emb), matmul(e.u_update, h)), e.b_update));
  auto r = sigmoid(add(add(matmul(e.w_reset, x_emb), matmul(e.u_reset, h)), e.b_reset));
  auto n = moegan::tanh(add(add(matmul(e.w_cand, x_emb), matmul(e.u_cand, mul(r, h))), e.b_cand));
  auto one = Tensor<S>::make(Mat<S>::Ones(h.rows(), 1), 1);
  return add(mul(z, h), mul(sub(one, z), n));
}

// Y^t: arithmetic mean of the expert representations.
template <typename S>
Tensor<S> aggregate(const std::vector<Tensor<S>>& representations) {
  if (representations.empty()) throw ShapeError("aggregate: empty representation list");
  Tensor<S> acc = representations[0];
  for (std::size_t i = 1; i < representations.size(); ++i) acc = add(acc, representations[i]);
  return scale(acc, S(1) / static_cast<S>(representations.size()));
}

// pi^t = softmax(W_G Y^t).
template <typename S>
Tensor<S> token_distribution(const GeneratorParams<S>& params, const Tensor<S>& y) {
  return softmax(matmul(params.proj, y));
}

// Advances every expert on the same input and produces pi^t.
template <typename S>
Tensor<S> generator_step(const GeneratorParams<S>& params, GeneratorState<S>& state,
                         const Tensor<S>& x_emb) {
  std::vector<Tensor<S>> reps;
  reps.reserve(state.hidden.size());
  for (std::size_t i = 0; i < state.hidden.size(); ++i) {
    state.hidden[i] = expert_step(params.experts[i], state.hidden[i], x_emb);
    reps.push_back(state.hidden[i]);
  }
  ++state.t;
  return token_distribution(params, aggregate(reps));
}

// ---------------------------------------------------------------------------
// Gumbel machinery

template <typename S>
Tensor<S> gumbel_noise(long n, RngStream& rng) {
  if (n < 1) throw DomainError("gumbel_noise: n must be >= 1");
  Mat<S> g(n, 1);
  for (long i = 0; i < n; ++i) g(i, 0) = static_cast<S>(rng.gumbel());
  return Tensor<S>::make(std::move(g), 1, false);
}

// argmax_i [g_i + log pi_i], ties to the lowest index.
template <typename S>
int gumbel_argmax(const Tensor<S>& pi, const Tensor<S>& g) {
  detail::check_same_shape("gumbel_max", pi, g);
  long best = 0;
  S bestv = std::numeric_limits<S>::lowest();
  for (long i = 0; i < pi.rows(); ++i) {
    S v = static_cast<S>(std::log(std::max(static_cast<double>(pi.value()(i, 0)), kLogFloor))) +
          g.value()(i, 0);
    if (v > bestv) {
      bestv = v;
      best = i;
    }
  }
  return static_cast<int>(best);
}

// One-hot sample from the Gumbel-Max trick.
template <typename S>
Tensor<S> gumbel_max(const Tensor<S>& pi, const Tensor<S>& g) {
  Mat<S> y = Mat<S>::Zero(pi.rows(), 1);
  y(gumbel_argmax(pi, g), 0) = S(1);
  return Tensor<S>::make(std::move(y), 1, false);
}

// Differentiable relaxation: softmax((log pi + g) / tau).
template <typename S>
Tensor<S> gumbel_softmax(const Tensor<S>& pi, const Tensor<S>& g, S tau) {
  if (!(tau > S(0))) throw DomainError("gumbel_softmax: tau must be positive");
  detail::check_same_shape("gumbel_softmax", pi, g);
  return softmax(scale(add(log_clamped(pi, static_cast<S>(kLogFloor)), g), S(1) / tau));
}

// ---------------------------------------------------------------------------
// Rollouts

// Differentiable rollout with the Gumbel noise supplied up front as an
// L x |V| matrix (row t is the noise for step t). Feedback into the next
// step is the soft mix of embedding rows, E^T y-hat.
template <typename S>
SoftSequence<S> generate_soft_with_noise(const GeneratorParams<S>& params, int length, S tau,
                                         const Mat<S>& noise) {
  if (length < 1) throw DomainError("generate_soft: length must be >= 1");
  if (noise.rows() != length || noise.cols() != params.vocab_size)
    throw ShapeError("generate_soft: noise must be length x vocab");
  GeneratorState<S> st = initial_state(params);
  Tensor<S> x = params.start;
  std::vector<Tensor<S>> rows;
  rows.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    Tensor<S> pi = generator_step(params, st, x);
    Tensor<S> g = Tensor<S>::make(noise.row(t).transpose(), 1, false);
    Tensor<S> yhat = gumbel_softmax(pi, g, tau);
    rows.push_back(yhat);
    x = matmul_t(params.embedding, yhat);
  }
  return stack_rows(rows);
}

template <typename S>
SoftSequence<S> generate_soft(const GeneratorParams<S>& params, int length, S tau,
                              RngStream& rng) {
  Mat<S> noise(length, params.vocab_size);
  for (long t = 0; t < length; ++t)
    for (long v = 0; v < params.vocab_size; ++v) noise(t, v) = static_cast<S>(rng.gumbel());
  return generate_soft_with_noise(params, length, tau, noise);
}

// Hard rollout: Gumbel-Max token at each step, embedding-row feedback.
template <typename S>
TokenSequence generate_hard(const GeneratorParams<S>& params, int length, RngStream& rng) {
  if (length < 1) throw DomainError("generate_hard: length must be >= 1");
  GeneratorState<S> st = initial_state(params);
  Tensor<S> x = params.start;
  TokenSequence tokens;
  tokens.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    Tensor<S> pi = generator_step(params, st, x);
    Tensor<S> g = gumbel_noise<S>(params.vocab_size, rng);
    int id = gumbel_argmax(pi, g);
    tokens.push_back(id);
    x = row_vec(params.embedding, id);
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Batched rollouts. One matrix row per sequence at every step turns the whole
// batch into a handful of GEMMs; results match the per-sequence ops up to
// float summation order.

// A batch of soft sequences stacked sequence-major: row b*length + t.
template <typename S>
struct SoftBatch {
  Tensor<S> rows;  // (batch*length) x |V|
  long batch = 0;
  long length = 0;
};

template <typename S>
struct BatchState {
  std::vector<Tensor<S>> hidden;  // per expert, batch x D_g
};

template <typename S>
BatchState<S> initial_batch_state(const GeneratorParams<S>& params, long batch) {
  BatchState<S> st;
  for (int i = 0; i < params.n_experts(); ++i)
    st.hidden.push_back(Tensor<S>::zeros(batch, params.hidden_dim, 2));
  return st;
}

// GRU update for a whole batch: X is batch x d_emb, H batch x D_g.
template <typename S>
Tensor<S> expert_step_batch(const ExpertParams<S>& e, const Tensor<S>& h, const Tensor<S>& x) {
  auto z = sigmoid(add_rowwise(add(matmul_bt(x, e.w_update), matmul_bt(h, e.u_update)), e.b_update));
  auto r = sigmoid(add_rowwise(add(matmul_bt(x, e.w_reset), matmul_bt(h, e.u_reset)), e.b_reset));
  auto n = moegan::tanh(
      add_rowwise(add(matmul_bt(x, e.w_cand), matmul_bt(mul(r, h), e.u_cand)), e.b_cand));
  auto one = Tensor<S>::make(Mat<S>::Ones(h.rows(), h.cols()), 2);
  return add(mul(z, h), mul(sub(one, z), n));
}

// Advances every expert and returns the batch of token distributions
// (batch x |V|).
template <typename S>
Tensor<S> generator_step_batch(const GeneratorParams<S>& params, BatchState<S>& state,
                               const Tensor<S>& x) {
  std::vector<Tensor<S>> reps;
  for (std::size_t i = 0; i < state.hidden.size(); ++i) {
    state.hidden[i] = expert_step_batch(params.experts[i], state.hidden[i], x);
    reps.push_back(state.hidden[i]);
  }
  return softmax_rows(matmul_bt(aggregate(reps), params.proj));
}

template <typename S>
SoftBatch<S> generate_soft_batch(const GeneratorParams<S>& params, long batch, int length, S tau,
                                 RngStream& rng) {
  if (!(tau > S(0))) throw DomainError("generate_soft_batch: tau must be positive");
  if (batch < 1 || length < 1) throw DomainError("generate_soft_batch: batch and length >= 1");
  BatchState<S> st = initial_batch_state(params, batch);
  Tensor<S> x = replicate_row(params.start, batch);
  std::vector<Tensor<S>> steps;
  steps.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    Tensor<S> pi = generator_step_batch(params, st, x);
    Mat<S> noise(batch, params.vocab_size);
    for (long b = 0; b < batch; ++b)
      for (long v = 0; v < params.vocab_size; ++v) noise(b, v) = static_cast<S>(rng.gumbel());
    Tensor<S> g = Tensor<S>::make(std::move(noise), 2, false);
    Tensor<S> yhat = softmax_rows(
        scale(add(log_clamped(pi, static_cast<S>(kLogFloor)), g), S(1) / tau));
    steps.push_back(yhat);
    x = matmul(yhat, params.embedding);
  }
  // Steps stack time-major (row t*batch + b); reorder to sequence-major.
  Tensor<S> stacked = concat(steps, 0);
  std::vector<long> perm(static_cast<std::size_t>(batch) * length);
  for (long b = 0; b < batch; ++b)
    for (long t = 0; t < length; ++t)
      perm[static_cast<std::size_t>(b * length + t)] = t * batch + b;
  return {permute_rows(stacked, perm), batch, length};
}

template <typename S>
std::vector<TokenSequence> generate_hard_batch(const GeneratorParams<S>& params, long batch,
                                               int length, RngStream& rng) {
  if (batch < 1 || length < 1) throw DomainError("generate_hard_batch: batch and length >= 1");
  BatchState<S> st = initial_batch_state(params, batch);
  Tensor<S> x = replicate_row(params.start, batch);
  std::vector<TokenSequence> out(static_cast<std::size_t>(batch));
  for (auto& seq : out) seq.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    Tensor<S> pi = generator_step_batch(params, st, x);
    Mat<S> onehot = Mat<S>::Zero(batch, params.vocab_size);
    for (long b = 0; b < batch; ++b) {
      long best = 0;
      double bestv = -std::numeric_limits<double>::infinity();
      for (long v = 0; v < params.vocab_size; ++v) {
        double val = std::log(std::max(static_cast<double>(pi.value()(b, v)), kLogFloor)) +
                     rng.gumbel();
        if (val > bestv) {
          bestv = val;
          best = v;
        }
      }
      out[static_cast<std::size_t>(b)].push_back(static_cast<int>(best));
      onehot(b, best) = S(1);
    }
    x = matmul(Tensor<S>::make(std::move(onehot), 2, false), params.embedding);
  }
  return out;
}

// Teacher-forced mean log-likelihood over a batch of equal-length sequences:
// (1/(B*L)) sum log pi^t_b[x_t_b], which equals the mean of the per-sequence
// means when lengths are uniform.
template <typename S>
Tensor<S> mean_log_likelihood_batch(const GeneratorParams<S>& params,
                                    const std::vector<TokenSequence>& batch) {
  if (batch.empty()) throw DomainError("mean_log_likelihood_batch: empty batch");
  const long bsz = static_cast<long>(batch.size());
  const long len = static_cast<long>(batch[0].size());
  for (const auto& seq : batch) {
    if (static_cast<long>(seq.size()) != len)
      throw ShapeError("mean_log_likelihood_batch: lengths differ");
    for (int id : seq)
      if (id < 0 || id >= params.vocab_size)
        throw DomainError("mean_log_likelihood_batch: token id " + std::to_string(id) +
                          " outside vocabulary of " + std::to_string(params.vocab_size));
  }
  if (len == 0) throw DomainError("mean_log_likelihood_batch: empty sequence");
  BatchState<S> st = initial_batch_state(params, bsz);
  Tensor<S> x = replicate_row(params.start, bsz);
  Tensor<S> acc;
  for (long t = 0; t < len; ++t) {
    Tensor<S> pi = generator_step_batch(params, st, x);
    Mat<S> onehot = Mat<S>::Zero(bsz, params.vocab_size);
    for (long b = 0; b < bsz; ++b)
      onehot(b, batch[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]) = S(1);
    Tensor<S> pick = Tensor<S>::make(onehot, 2, false);
    Tensor<S> term = sum(mul(log_clamped(pi, static_cast<S>(kLogFloor)), pick));
    acc = t == 0 ? term : add(acc, term);
    x = matmul(pick, params.embedding);
  }
  return scale(acc, S(1) / static_cast<S>(bsz * len));
}

// Teacher-forced per-token mean log-likelihood: (1/L) sum_t log pi^t[x_t].
template <typename S>
Tensor<S> sequence_log_likelihood(const GeneratorParams<S>& params, const TokenSequence& tokens) {
  if (tokens.empty()) throw DomainError("sequence_log_likelihood: empty sequence");
  for (int id : tokens)
    if (id < 0 || id >= params.vocab_size)
      throw DomainError("sequence_log_likelihood: token id " + std::to_string(id) +
                        " outside vocabulary of " + std::to_string(params.vocab_size));
  GeneratorState<S> st = initial_state(params);
  Tensor<S> x = params.start;
  Tensor<S> acc;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Tensor<S> pi = generator_step(params, st, x);
    Tensor<S> term = sum(log_clamped(slice_rows(pi, tokens[t], 1), static_cast<S>(kLogFloor)));
    acc = t == 0 ? term : add(acc, term);
    x = row_vec(params.embedding, tokens[t]);
  }
  return scale(acc, S(1) / static_cast<S>(tokens.size()));
}

}  // namespace moegan
