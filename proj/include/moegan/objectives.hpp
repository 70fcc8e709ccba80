#pragma once

// The four scalar objectives: MLE loss, feature-statistics-alignment
// distance, relativistic discriminator loss, and the generator loss that
// combines the latter two.

#include "moegan/feature_net.hpp"
#include "moegan/generator.hpp"
#include "moegan/tensor.hpp"

#include <vector>

namespace moegan {

template <typename S>
struct LossReport {
  S loss_d = 0;
  S loss_g = 0;
  S fsa = 0;
  S mean_gap = 0;
};

// Mean over the batch of per-sequence negative mean log-likelihood.
// Equal-length batches take the batched GEMM path; mixed lengths fall back
// to per-sequence teacher forcing.
template <typename S>
Tensor<S> mle_loss(const GeneratorParams<S>& gen, const std::vector<TokenSequence>& batch) {
  if (batch.empty()) throw DomainError("mle_loss: empty batch");
  bool uniform = true;
  for (const auto& seq : batch) uniform = uniform && seq.size() == batch[0].size();
  if (uniform && !batch[0].empty()) return neg(mean_log_likelihood_batch(gen, batch));
  Tensor<S> acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor<S> nll = neg(sequence_log_likelihood(gen, batch[i]));
    acc = i == 0 ? nll : add(acc, nll);
  }
  return scale(acc, S(1) / static_cast<S>(batch.size()));
}

// || mean_real F(x) - mean_fake F(x) ||_2 between minibatch feature
// centroids. F is the frozen encoder and real inputs are hard constants, so
// gradients reach only the fake soft sequences. Batch sizes may differ.
template <typename S>
Tensor<S> fsa_distance(const FeatureNetParams<S>& frozen, const std::vector<TokenSequence>& real,
                       const std::vector<SoftSequence<S>>& fake) {
  if (real.empty() || fake.empty()) throw DomainError("fsa_distance: empty batch");
  Tensor<S> c_real = mean_rows(features_batch(frozen, real));
  Tensor<S> c_fake = mean_rows(features_batch(frozen, fake));
  return l2_norm(sub(c_real, c_fake));
}

template <typename S>
Tensor<S> fsa_distance(const FeatureNetParams<S>& frozen, const std::vector<TokenSequence>& real,
                       const SoftBatch<S>& fake) {
  if (real.empty() || fake.batch < 1) throw DomainError("fsa_distance: empty batch");
  Tensor<S> c_real = mean_rows(features_batch(frozen, real));
  Tensor<S> c_fake = mean_rows(features_batch(frozen, fake));
  return l2_norm(sub(c_real, c_fake));
}

// Feature-space form used by tests that stub out the encoder.
template <typename S>
Tensor<S> fsa_distance_features(const Tensor<S>& real_features, const Tensor<S>& fake_features) {
  return l2_norm(sub(mean_rows(real_features), mean_rows(fake_features)));
}

// Delta_j = H(real_j) - H(fake_j), paired by batch position.
template <typename S, typename RealBatch, typename FakeBatch>
Tensor<S> relativistic_gap(const FeatureNetParams<S>& disc, const RealBatch& real,
                           const FakeBatch& fake) {
  if (real.size() != fake.size())
    throw ShapeError("relativistic_gap: batch sizes differ (" + std::to_string(real.size()) +
                     " vs " + std::to_string(fake.size()) + ")");
  if (real.empty()) throw DomainError("relativistic_gap: empty batch");
  return sub(logits_batch(disc, real), logits_batch(disc, fake));
}

template <typename S>
Tensor<S> relativistic_gap(const FeatureNetParams<S>& disc, const std::vector<TokenSequence>& real,
                           const SoftBatch<S>& fake) {
  if (static_cast<long>(real.size()) != fake.batch)
    throw ShapeError("relativistic_gap: batch sizes differ (" + std::to_string(real.size()) +
                     " vs " + std::to_string(fake.batch) + ")");
  if (real.empty()) throw DomainError("relativistic_gap: empty batch");
  return sub(logits_batch(disc, real), logits_from_features(disc, features_batch(disc, fake)));
}

// L_D = -mean_j log sigma(Delta_j).
template <typename S>
Tensor<S> discriminator_loss(const Tensor<S>& gap) {
  if (gap.size() < 1) throw DomainError("discriminator_loss: empty gap vector");
  return neg(mean(log_sigmoid(gap)));
}

// L_G = -L_D + fsa. The relativistic term is the literal negation of the
// discriminator loss; fsa_multiplier exists only for the ablation harness.
template <typename S>
Tensor<S> generator_loss(const Tensor<S>& gap, const Tensor<S>& fsa, S fsa_multiplier = S(1)) {
  return add(neg(discriminator_loss(gap)), scale(fsa, fsa_multiplier));
}

}  // namespace moegan
