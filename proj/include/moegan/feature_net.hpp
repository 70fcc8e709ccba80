#pragma once

// Convolutional text encoder used twice: with its logit head as the
// comparative discriminator H, and as the frozen auxiliary encoder F that
// backs feature statistics alignment (F is a value copy of H refreshed each
// iteration, logit head excluded).
//
// Pathway: one-hot or soft token rows -> 64-d embedding -> valid convolutions
// with windows {2,3,4,5} x 300 channels -> max-over-time -> 1200-d pooled ->
// gated highway -> linear projection to the 100-d feature space. Batches are
// processed as row-stacked matrices so every stage is a single GEMM.

#include "moegan/generator.hpp"
#include "moegan/rng.hpp"
#include "moegan/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace moegan {

inline constexpr int kDiscEmbedDim = 64;
inline constexpr int kConvChannels = 300;
inline constexpr std::array<int, 4> kConvWindows = {2, 3, 4, 5};
inline constexpr int kPooledDim = kConvChannels * static_cast<int>(kConvWindows.size());  // 1200
inline constexpr int kFeatureDim = 100;
inline constexpr int kPadToken = 0;

template <typename S>
struct FeatureNetParams {
  Tensor<S> embedding;  // |V| x 64
  struct Conv {
    Tensor<S> kernel;  // (window*64) x 300
    Tensor<S> bias;    // 300
    int window = 0;
  };
  std::vector<Conv> convs;
  Tensor<S> highway_gate_w, highway_gate_b;            // 1200 x 1200, 1200
  Tensor<S> highway_transform_w, highway_transform_b;  // 1200 x 1200, 1200
  Tensor<S> proj_w, proj_b;                            // 1200 x 100, 100
  Tensor<S> head_w, head_b;                            // 100 x 1, 1
  int vocab_size = 0;

  // The feature pathway shared with the auxiliary encoder.
  ParamRegistry<S> feature_registry(const std::string& prefix = "disc") const {
    ParamRegistry<S> r;
    r.add(prefix + "/embedding", embedding);
    for (const auto& c : convs) {
      std::string p = prefix + "/conv" + std::to_string(c.window);
      r.add(p + "/kernel", c.kernel);
      r.add(p + "/bias", c.bias);
    }
    r.add(prefix + "/highway/gate_w", highway_gate_w);
    r.add(prefix + "/highway/gate_b", highway_gate_b);
    r.add(prefix + "/highway/transform_w", highway_transform_w);
    r.add(prefix + "/highway/transform_b", highway_transform_b);
    r.add(prefix + "/proj_w", proj_w);
    r.add(prefix + "/proj_b", proj_b);
    return r;
  }

  ParamRegistry<S> registry(const std::string& prefix = "disc") const {
    ParamRegistry<S> r = feature_registry(prefix);
    r.add(prefix + "/head_w", head_w);
    r.add(prefix + "/head_b", head_b);
    return r;
  }
};

template <typename S>
using FeatureVector = Tensor<S>;  // 100-d

template <typename S>
FeatureNetParams<S> make_feature_net(int vocab_size, RngStream& rng) {
  if (vocab_size < 1) throw DomainError("make_feature_net: vocab must be positive");
  FeatureNetParams<S> p;
  p.vocab_size = vocab_size;
  p.embedding = detail::uniform_init<S>(rng, vocab_size, kDiscEmbedDim, 0.1);
  for (int w : kConvWindows) {
    typename FeatureNetParams<S>::Conv c;
    c.window = w;
    c.kernel = detail::uniform_init<S>(rng, w * kDiscEmbedDim, kConvChannels,
                                       1.0 / std::sqrt(static_cast<double>(w * kDiscEmbedDim)));
    c.bias = Tensor<S>::zeros(kConvChannels, 1, 1, true);
    p.convs.push_back(std::move(c));
  }
  double hs = 1.0 / std::sqrt(static_cast<double>(kPooledDim));
  p.highway_gate_w = detail::uniform_init<S>(rng, kPooledDim, kPooledDim, hs);
  p.highway_gate_b = Tensor<S>::zeros(kPooledDim, 1, 1, true);
  p.highway_transform_w = detail::uniform_init<S>(rng, kPooledDim, kPooledDim, hs);
  p.highway_transform_b = Tensor<S>::zeros(kPooledDim, 1, 1, true);
  p.proj_w = detail::uniform_init<S>(rng, kPooledDim, kFeatureDim, hs);
  p.proj_b = Tensor<S>::zeros(kFeatureDim, 1, 1, true);
  p.head_w = detail::uniform_init<S>(rng, kFeatureDim, 1, 1.0 / std::sqrt(double(kFeatureDim)));
  p.head_b = Tensor<S>::zeros(1, 1, 1, true);
  return p;
}

// Deep value copy with every tensor marked non-trainable. Later updates to
// the source never reach the copy.
template <typename S>
FeatureNetParams<S> copy_to_auxiliary(const FeatureNetParams<S>& disc) {
  FeatureNetParams<S> f;
  f.vocab_size = disc.vocab_size;
  f.embedding = disc.embedding.detached();
  for (const auto& c : disc.convs)
    f.convs.push_back({c.kernel.detached(), c.bias.detached(), c.window});
  f.highway_gate_w = disc.highway_gate_w.detached();
  f.highway_gate_b = disc.highway_gate_b.detached();
  f.highway_transform_w = disc.highway_transform_w.detached();
  f.highway_transform_b = disc.highway_transform_b.detached();
  f.proj_w = disc.proj_w.detached();
  f.proj_b = disc.proj_b.detached();
  f.head_w = disc.head_w.detached();
  f.head_b = disc.head_b.detached();
  return f;
}

template <typename To, typename From>
FeatureNetParams<To> cast_feature_net(const FeatureNetParams<From>& d) {
  FeatureNetParams<To> f;
  f.vocab_size = d.vocab_size;
  f.embedding = cast<To>(d.embedding);
  for (const auto& c : d.convs) f.convs.push_back({cast<To>(c.kernel), cast<To>(c.bias), c.window});
  f.highway_gate_w = cast<To>(d.highway_gate_w);
  f.highway_gate_b = cast<To>(d.highway_gate_b);
  f.highway_transform_w = cast<To>(d.highway_transform_w);
  f.highway_transform_b = cast<To>(d.highway_transform_b);
  f.proj_w = cast<To>(d.proj_w);
  f.proj_b = cast<To>(d.proj_b);
  f.head_w = cast<To>(d.head_w);
  f.head_b = cast<To>(d.head_b);
  return f;
}

namespace detail {
inline long padded_length(long t) {
  long w = kConvWindows.back();
  return t < w ? w : t;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Input assembly
//
// Both real (hard) and fake (soft) sequences enter as rows over the
// vocabulary and go through the same product with the embedding matrix, so
// gradients flow through soft inputs. Sequences shorter than the largest
// window are left-padded with the pad token.

// One-hot rows for a hard sequence, left-padded, as a constant (T x |V|).
template <typename S>
Tensor<S> onehot_rows(const TokenSequence& tokens, int vocab_size) {
  if (tokens.empty()) throw DomainError("onehot_rows: empty sequence");
  long t = static_cast<long>(tokens.size());
  long padded = detail::padded_length(t);
  Mat<S> rows = Mat<S>::Zero(padded, vocab_size);
  long offset = padded - t;
  for (long i = 0; i < offset; ++i) rows(i, kPadToken) = S(1);
  for (long i = 0; i < t; ++i) {
    int id = tokens[static_cast<std::size_t>(i)];
    if (id < 0 || id >= vocab_size)
      throw DomainError("onehot_rows: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(vocab_size));
    rows(offset + i, id) = S(1);
  }
  return Tensor<S>::make(std::move(rows), 2, false);
}

// Left-pads a soft sequence with one-hot pad rows to the conv minimum.
template <typename S>
Tensor<S> pad_soft_rows(const SoftSequence<S>& seq, int vocab_size, long target_len = 0) {
  if (seq.rows() < 1) throw DomainError("pad_soft_rows: empty sequence");
  if (seq.cols() != vocab_size) throw ShapeError("pad_soft_rows: vocabulary mismatch");
  long need = std::max(detail::padded_length(seq.rows()), target_len);
  if (seq.rows() == need) return seq;
  Mat<S> padm = Mat<S>::Zero(need - seq.rows(), vocab_size);
  padm.col(kPadToken).setOnes();
  return concat<S>({Tensor<S>::make(std::move(padm), 2, false), seq}, 0);
}

// T x 64 embedded rows for one hard sequence.
template <typename S>
Tensor<S> embed_input(const FeatureNetParams<S>& params, const TokenSequence& tokens) {
  return matmul(onehot_rows<S>(tokens, params.vocab_size), params.embedding);
}

// T x 64 embedded rows for one soft sequence (gradient flows through it).
template <typename S>
Tensor<S> embed_input(const FeatureNetParams<S>& params, const SoftSequence<S>& seq) {
  return matmul(pad_soft_rows(seq, params.vocab_size), params.embedding);
}

// ---------------------------------------------------------------------------
// Feature pathway

// (batch*T) x 64 embedded rows -> batch x 100 features.
template <typename S>
Tensor<S> extract_features_batch(const FeatureNetParams<S>& params, const Tensor<S>& embedded,
                                 long batch) {
  std::vector<Tensor<S>> pooled;
  pooled.reserve(params.convs.size());
  for (const auto& c : params.convs)
    pooled.push_back(
        max_over_time_batch(conv1d_over_time(embedded, c.kernel, c.bias, c.window, batch), batch));
  Tensor<S> cat = concat(pooled, 1);  // batch x 1200
  Tensor<S> gate = sigmoid(add_rowwise(matmul(cat, params.highway_gate_w), params.highway_gate_b));
  Tensor<S> transform =
      moegan::tanh(add_rowwise(matmul(cat, params.highway_transform_w), params.highway_transform_b));
  Tensor<S> ones = Tensor<S>::make(Mat<S>::Ones(batch, kPooledDim), 2, false);
  Tensor<S> highway = add(mul(gate, transform), mul(sub(ones, gate), cat));
  return add_rowwise(matmul(highway, params.proj_w), params.proj_b);  // batch x 100
}

// Single-sequence form: T x 64 embedded rows -> 100-d feature vector.
template <typename S>
FeatureVector<S> extract_features(const FeatureNetParams<S>& params, const Tensor<S>& embedded) {
  return mean_rows(extract_features_batch(params, embedded, 1));
}

// batch x 1 logits from batch x 100 features.
template <typename S>
Tensor<S> logits_from_features(const FeatureNetParams<S>& params, const Tensor<S>& features) {
  return add_rowwise(matmul(features, params.head_w), params.head_b);
}

// Stacks a batch of hard sequences into one (batch*T) x |V| constant.
// All sequences pad to the longest (and at least the largest conv window).
template <typename S>
Tensor<S> stack_hard_batch(const FeatureNetParams<S>& params,
                           const std::vector<TokenSequence>& batch, long* time_out = nullptr) {
  if (batch.empty()) throw DomainError("stack_hard_batch: empty batch");
  long tmax = 0;
  for (const auto& seq : batch) tmax = std::max(tmax, static_cast<long>(seq.size()));
  long t = detail::padded_length(tmax);
  Mat<S> rows = Mat<S>::Zero(t * static_cast<long>(batch.size()), params.vocab_size);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch[b];
    if (seq.empty()) throw DomainError("stack_hard_batch: empty sequence in batch");
    long offset = t - static_cast<long>(seq.size());
    long base = static_cast<long>(b) * t;
    for (long i = 0; i < offset; ++i) rows(base + i, kPadToken) = S(1);
    for (long i = 0; i < static_cast<long>(seq.size()); ++i) {
      int id = seq[static_cast<std::size_t>(i)];
      if (id < 0 || id >= params.vocab_size)
        throw DomainError("stack_hard_batch: token id " + std::to_string(id) +
                          " outside vocabulary of " + std::to_string(params.vocab_size));
      rows(base + offset + i, id) = S(1);
    }
  }
  if (time_out) *time_out = t;
  return Tensor<S>::make(std::move(rows), 2, false);
}

// Stacks a batch of soft sequences ((batch*T) x |V|), keeping gradients.
template <typename S>
Tensor<S> stack_soft_batch(const FeatureNetParams<S>& params,
                           const std::vector<SoftSequence<S>>& batch, long* time_out = nullptr) {
  if (batch.empty()) throw DomainError("stack_soft_batch: empty batch");
  long tmax = 0;
  for (const auto& seq : batch) tmax = std::max(tmax, seq.rows());
  long t = detail::padded_length(tmax);
  std::vector<Tensor<S>> padded;
  padded.reserve(batch.size());
  for (const auto& seq : batch) padded.push_back(pad_soft_rows(seq, params.vocab_size, t));
  if (time_out) *time_out = t;
  return concat(padded, 0);
}

// batch x 100 features straight from sequences.
template <typename S>
Tensor<S> features_batch(const FeatureNetParams<S>& params, const std::vector<TokenSequence>& batch) {
  Tensor<S> stacked = stack_hard_batch(params, batch);
  return extract_features_batch(params, matmul(stacked, params.embedding),
                                static_cast<long>(batch.size()));
}

template <typename S>
Tensor<S> features_batch(const FeatureNetParams<S>& params,
                         const std::vector<SoftSequence<S>>& batch) {
  Tensor<S> stacked = stack_soft_batch(params, batch);
  return extract_features_batch(params, matmul(stacked, params.embedding),
                                static_cast<long>(batch.size()));
}

// Pre-stacked soft batch straight from a batched rollout. Left-pads every
// sequence with one-hot pad rows when shorter than the largest window.
template <typename S>
Tensor<S> features_batch(const FeatureNetParams<S>& params, const SoftBatch<S>& batch) {
  if (batch.batch < 1) throw DomainError("features_batch: empty soft batch");
  if (batch.rows.cols() != params.vocab_size)
    throw ShapeError("features_batch: vocabulary mismatch");
  Tensor<S> rows = batch.rows;
  long need = detail::padded_length(batch.length);
  if (need != batch.length) {
    long pad = need - batch.length;
    Mat<S> padm = Mat<S>::Zero(batch.batch * pad, params.vocab_size);
    padm.col(kPadToken).setOnes();
    Tensor<S> stacked = concat<S>({Tensor<S>::make(std::move(padm), 2, false), rows}, 0);
    // Interleave: each sequence gets its pad block ahead of its own rows.
    std::vector<long> perm(static_cast<std::size_t>(batch.batch * need));
    for (long b = 0; b < batch.batch; ++b) {
      for (long t = 0; t < pad; ++t)
        perm[static_cast<std::size_t>(b * need + t)] = b * pad + t;
      for (long t = 0; t < batch.length; ++t)
        perm[static_cast<std::size_t>(b * need + pad + t)] =
            batch.batch * pad + b * batch.length + t;
    }
    rows = permute_rows(stacked, perm);
  }
  return extract_features_batch(params, matmul(rows, params.embedding), batch.batch);
}

// batch x 1 logits H(x) for a batch of either input kind.
template <typename S, typename Batch>
Tensor<S> logits_batch(const FeatureNetParams<S>& params, const Batch& batch) {
  return logits_from_features(params, features_batch(params, batch));
}

// Scalar H(x) for one sequence.
template <typename S>
Tensor<S> logit(const FeatureNetParams<S>& params, const TokenSequence& seq) {
  return sum(logits_batch(params, std::vector<TokenSequence>{seq}));
}

template <typename S>
Tensor<S> logit(const FeatureNetParams<S>& params, const SoftSequence<S>& seq) {
  return sum(logits_batch(params, std::vector<SoftSequence<S>>{seq}));
}

}  // namespace moegan
