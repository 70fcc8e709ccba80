#pragma once

// Optimizer, gradient clipping, MLE pretraining, and the alternating
// adversarial loop: copy discriminator weights into the frozen encoder, run
// g generator steps against the relativistic gap plus the FSA distance, then
// k discriminator steps on fresh minibatches. The discriminator is never
// pretrained.

#include "moegan/checkpoint.hpp"
#include "moegan/feature_net.hpp"
#include "moegan/generator.hpp"
#include "moegan/objectives.hpp"
#include "moegan/rng.hpp"
#include "moegan/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace moegan {

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int g = 1;  // generator steps per iteration
  int k = 5;  // discriminator steps per iteration
  int pretrain_epochs = 50;
  float tau = 1.0f;
  float tau_anneal = 1.0f;  // per-iteration multiplier; 1.0 keeps tau fixed
  int n_experts = 2;
  bool shared_experts = false;
  int batch_size = 64;
  float lr_pretrain = 1e-2f;
  float lr_gen_adv = 1e-4f;
  float lr_disc = 1e-4f;
  float clip_norm = 5.0f;
  bool clip_per_tensor = false;
  float fsa_multiplier = 1.0f;
  int max_iterations = 200;
  int eval_interval = 10;
  int eval_samples = 2048;
  int seq_len = 12;
  int vocab_size = 32;
  int emb_dim = 32;
  int hidden_dim = 40;
  bool mle_baseline = false;  // replace adversarial iterations with plain MLE steps
  std::uint64_t seed = 1;

  void validate() const {
    if (g < 1 || k < 1) throw DomainError("config: g and k must be >= 1");
    if (!(tau > 0)) throw DomainError("config: tau must be positive");
    if (!(lr_pretrain > 0 && lr_gen_adv > 0 && lr_disc > 0))
      throw DomainError("config: learning rates must be positive");
    if (!(clip_norm > 0)) throw DomainError("config: clip_norm must be positive");
    if (batch_size < 1 || seq_len < 1 || vocab_size < 2)
      throw DomainError("config: batch_size, seq_len, vocab_size out of range");
    if (n_experts < 1) throw DomainError("config: n_experts must be >= 1");
    if (max_iterations < 0 || eval_interval < 1 || pretrain_epochs < 0)
      throw DomainError("config: schedule out of range");
  }

  float effective_tau(long iteration) const {
    if (tau_anneal >= 1.0f) return tau;
    float t = tau * std::pow(tau_anneal, static_cast<float>(iteration));
    return t < 1e-3f ? 1e-3f : t;
  }
};

// ---------------------------------------------------------------------------
// Adam with bias correction and global-norm clipping

template <typename S>
struct AdamState {
  std::vector<Mat<S>> m, v;
  long t = 0;
  S beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);

  void init(const ParamRegistry<S>& params) {
    m.clear();
    v.clear();
    t = 0;
    for (const auto& [name, p] : params.items()) {
      m.push_back(Mat<S>::Zero(p.rows(), p.cols()));
      v.push_back(Mat<S>::Zero(p.rows(), p.cols()));
    }
  }
};

template <typename S>
void adam_step(AdamState<S>& st, ParamRegistry<S>& params, S lr) {
  if (st.m.size() != params.size())
    throw ShapeError("adam_step: state holds " + std::to_string(st.m.size()) +
                     " slots for " + std::to_string(params.size()) + " parameters");
  ++st.t;
  S c1 = S(1) - std::pow(st.beta1, static_cast<S>(st.t));
  S c2 = S(1) - std::pow(st.beta2, static_cast<S>(st.t));
  std::size_t i = 0;
  for (auto& [name, p] : params.items()) {
    const Mat<S>& g = p.grad();
    if (g.rows() != st.m[i].rows() || g.cols() != st.m[i].cols())
      throw ShapeError("adam_step: gradient shape mismatch for " + name);
    st.m[i] = st.beta1 * st.m[i] + (S(1) - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (S(1) - st.beta2) * g.cwiseProduct(g);
    Mat<S> mhat = st.m[i] / c1;
    Mat<S> vhat = st.v[i] / c2;
    p.value() -= lr * (mhat.array() / (vhat.array().sqrt() + st.eps)).matrix();
    ++i;
  }
}

// Scales all gradients by threshold/norm when the global L2 norm exceeds the
// threshold. Returns the pre-clip norm.
template <typename S>
double clip_global_norm(ParamRegistry<S>& params, S threshold) {
  if (!(threshold > S(0))) throw DomainError("clip_global_norm: threshold must be positive");
  double sq = 0;
  for (auto& [name, p] : params.items()) sq += static_cast<double>(p.grad().squaredNorm());
  double norm = std::sqrt(sq);
  if (norm > static_cast<double>(threshold)) {
    S factor = static_cast<S>(static_cast<double>(threshold) / norm);
    for (auto& [name, p] : params.items()) p.grad() *= factor;
  }
  return norm;
}

// Per-tensor variant kept behind the config flag.
template <typename S>
void clip_per_tensor_norm(ParamRegistry<S>& params, S threshold) {
  if (!(threshold > S(0))) throw DomainError("clip_per_tensor_norm: threshold must be positive");
  for (auto& [name, p] : params.items()) {
    double norm = static_cast<double>(p.grad().norm());
    if (norm > static_cast<double>(threshold))
      p.grad() *= static_cast<S>(static_cast<double>(threshold) / norm);
  }
}

// ---------------------------------------------------------------------------
// Trainer state

template <typename S>
struct TrainerState {
  TrainConfig cfg;
  GeneratorParams<S> gen;
  FeatureNetParams<S> disc;
  ParamRegistry<S> gen_params, disc_params;
  AdamState<S> adam_gen, adam_disc;
  RngStream shuffle_stream, gumbel_stream;
  long iteration = 0;
  long generator_updates = 0;
  bool pretrained = false;
};

template <typename S>
TrainerState<S> make_trainer(const TrainConfig& cfg) {
  cfg.validate();
  TrainerState<S> st;
  st.cfg = cfg;
  RngStream init(derive_seed(cfg.seed, "init"));
  st.gen = make_generator<S>(cfg.vocab_size, cfg.emb_dim, cfg.hidden_dim, cfg.n_experts,
                             cfg.shared_experts, init);
  st.disc = make_feature_net<S>(cfg.vocab_size, init);
  st.gen_params = st.gen.registry();
  st.disc_params = st.disc.registry();
  st.adam_gen.init(st.gen_params);
  st.adam_disc.init(st.disc_params);
  st.shuffle_stream = RngStream(derive_seed(cfg.seed, "data-shuffle"));
  st.gumbel_stream = RngStream(derive_seed(cfg.seed, "gumbel"));
  return st;
}

namespace detail {
template <typename S>
void require_finite(S value, const char* what) {
  if (!std::isfinite(static_cast<double>(value)))
    throw NonFiniteError(std::string(what) + " is not finite");
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

inline std::vector<TokenSequence> sample_batch(const std::vector<TokenSequence>& corpus,
                                               std::size_t batch, RngStream& rng) {
  std::vector<TokenSequence> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(corpus[rng.below(corpus.size())]);
  return out;
}
}  // namespace detail

// One clipped Adam step on the generator against the MLE loss of a batch.
template <typename S>
S mle_step(TrainerState<S>& st, const std::vector<TokenSequence>& batch, S lr) {
  st.gen_params.zero_grads();
  S loss_value;
  {
    Tape<S> tape;
    Tensor<S> loss = mle_loss(st.gen, batch);
    loss_value = loss.item();
    detail::require_finite(loss_value, "mle loss");
    tape.backward(loss);
  }
  if (st.cfg.clip_per_tensor)
    clip_per_tensor_norm(st.gen_params, static_cast<S>(st.cfg.clip_norm));
  else
    clip_global_norm(st.gen_params, static_cast<S>(st.cfg.clip_norm));
  adam_step(st.adam_gen, st.gen_params, lr);
  ++st.generator_updates;
  return loss_value;
}

// m epochs of shuffled minibatch MLE. Returns the per-epoch mean loss.
template <typename S>
std::vector<double> pretrain(TrainerState<S>& st, const std::vector<TokenSequence>& corpus,
                             const std::function<void(int, double)>& on_epoch = {}) {
  if (corpus.empty()) throw DomainError("pretrain: empty corpus");
  std::vector<double> log;
  for (int epoch = 0; epoch < st.cfg.pretrain_epochs; ++epoch) {
    auto order = detail::shuffled_indices(corpus.size(), st.shuffle_stream);
    double acc = 0;
    long steps = 0;
    for (std::size_t off = 0; off < order.size(); off += st.cfg.batch_size) {
      std::vector<TokenSequence> batch;
      for (std::size_t i = off; i < std::min(order.size(), off + st.cfg.batch_size); ++i)
        batch.push_back(corpus[order[i]]);
      acc += static_cast<double>(mle_step(st, batch, static_cast<S>(st.cfg.lr_pretrain)));
      ++steps;
    }
    log.push_back(acc / static_cast<double>(steps));
    if (on_epoch) on_epoch(epoch, log.back());
  }
  st.pretrained = true;
  return log;
}

// Phase-boundary observations for contract tests: parameter hashes right
// after the generator phase, before any discriminator update.
struct IterationProbe {
  std::uint64_t disc_hash_after_gen_phase = 0;
  std::uint64_t gen_hash_after_gen_phase = 0;
};

// One full adversarial iteration (Algorithm steps: copy, g generator steps,
// k discriminator steps). Returns the last-step losses. When
// last_gen_grads is given, the gradient map of the final generator step is
// copied out for contract checks, collected over grad_scope when supplied
// (e.g. generator plus discriminator, to assert the latter stays zero).
template <typename S>
LossReport<S> adversarial_iteration(TrainerState<S>& st, const std::vector<TokenSequence>& corpus,
                                    GradientMap<S>* last_gen_grads = nullptr,
                                    const ParamRegistry<S>* grad_scope = nullptr,
                                    IterationProbe* probe = nullptr) {
  if (corpus.size() < static_cast<std::size_t>(st.cfg.batch_size))
    throw DomainError("adversarial_iteration: corpus smaller than one batch");
  LossReport<S> report;
  const S tau = static_cast<S>(st.cfg.effective_tau(st.iteration));
  FeatureNetParams<S> frozen = copy_to_auxiliary(st.disc);

  for (int step = 0; step < st.cfg.g; ++step) {
    auto real = detail::sample_batch(corpus, st.cfg.batch_size, st.shuffle_stream);
    st.gen_params.zero_grads();
    {
      FrozenScope<S> hold(st.disc_params);  // discriminator is a constant here
      Tape<S> tape;
      SoftBatch<S> fake =
          generate_soft_batch(st.gen, st.cfg.batch_size, st.cfg.seq_len, tau, st.gumbel_stream);
      Tensor<S> gap = relativistic_gap(st.disc, real, fake);
      Tensor<S> fsa = fsa_distance(frozen, real, fake);
      Tensor<S> loss = generator_loss(gap, fsa, static_cast<S>(st.cfg.fsa_multiplier));
      report.loss_g = loss.item();
      report.fsa = fsa.item();
      report.mean_gap = gap.value().mean();
      detail::require_finite(report.loss_g, "generator loss");
      if (last_gen_grads)
        *last_gen_grads = tape.backward(loss, grad_scope ? *grad_scope : st.gen_params);
      else
        tape.backward(loss);
    }
    if (st.cfg.clip_per_tensor)
      clip_per_tensor_norm(st.gen_params, static_cast<S>(st.cfg.clip_norm));
    else
      clip_global_norm(st.gen_params, static_cast<S>(st.cfg.clip_norm));
    adam_step(st.adam_gen, st.gen_params, static_cast<S>(st.cfg.lr_gen_adv));
    ++st.generator_updates;
  }

  if (probe) {
    probe->disc_hash_after_gen_phase = st.disc_params.value_hash();
    probe->gen_hash_after_gen_phase = st.gen_params.value_hash();
  }

  for (int step = 0; step < st.cfg.k; ++step) {
    auto real = detail::sample_batch(corpus, st.cfg.batch_size, st.shuffle_stream);
    // Fresh fake minibatch, rolled out without a tape: the soft sequences
    // enter the discriminator as constants.
    SoftBatch<S> fake =
        generate_soft_batch(st.gen, st.cfg.batch_size, st.cfg.seq_len, tau, st.gumbel_stream);
    st.disc_params.zero_grads();
    {
      Tape<S> tape;
      Tensor<S> gap = relativistic_gap(st.disc, real, fake);
      Tensor<S> loss = discriminator_loss(gap);
      report.loss_d = loss.item();
      detail::require_finite(report.loss_d, "discriminator loss");
      tape.backward(loss);
    }
    if (st.cfg.clip_per_tensor)
      clip_per_tensor_norm(st.disc_params, static_cast<S>(st.cfg.clip_norm));
    else
      clip_global_norm(st.disc_params, static_cast<S>(st.cfg.clip_norm));
    adam_step(st.adam_disc, st.disc_params, static_cast<S>(st.cfg.lr_disc));
  }

  ++st.iteration;
  return report;
}

// MLE-baseline surrogate for one adversarial iteration: the same number of
// generator updates, driven by the MLE objective alone.
template <typename S>
LossReport<S> mle_iteration(TrainerState<S>& st, const std::vector<TokenSequence>& corpus) {
  if (corpus.size() < static_cast<std::size_t>(st.cfg.batch_size))
    throw DomainError("mle_iteration: corpus smaller than one batch");
  LossReport<S> report;
  for (int step = 0; step < st.cfg.g; ++step) {
    auto batch = detail::sample_batch(corpus, st.cfg.batch_size, st.shuffle_stream);
    report.loss_g = mle_step(st, batch, static_cast<S>(st.cfg.lr_pretrain));
  }
  ++st.iteration;
  return report;
}

// ---------------------------------------------------------------------------
// Full driver

template <typename S>
struct TrainHooks {
  // Called after pretraining (iteration 0), on the eval grid, and at the
  // final iteration. Resumed runs skip rows at or before the resume point.
  std::function<void(long iteration, const LossReport<S>&, TrainerState<S>&)> on_eval;
  std::function<void(int epoch, double mle)> on_pretrain_epoch;
};

template <typename S>
void train(TrainerState<S>& st, const std::vector<TokenSequence>& corpus,
           const TrainHooks<S>& hooks) {
  if (corpus.empty()) throw DomainError("train: empty corpus");
  if (!st.pretrained) {
    pretrain(st, corpus, hooks.on_pretrain_epoch);
    if (hooks.on_eval) hooks.on_eval(0, LossReport<S>{}, st);
  }
  while (st.iteration < st.cfg.max_iterations) {
    LossReport<S> report = st.cfg.mle_baseline ? mle_iteration(st, corpus)
                                               : adversarial_iteration(st, corpus);
    bool on_grid = st.iteration % st.cfg.eval_interval == 0;
    bool last = st.iteration == st.cfg.max_iterations;
    if ((on_grid || last) && hooks.on_eval) hooks.on_eval(st.iteration, report, st);
  }
}

// ---------------------------------------------------------------------------
// Trainer checkpointing

namespace detail {
template <typename S>
void append_registry(std::vector<CheckpointEntry>& out, const ParamRegistry<S>& params) {
  for (const auto& [name, t] : params.items()) {
    CheckpointEntry e;
    e.name = name;
    if (t.rank() == 0) {
      e.rank = 0;
    } else if (t.rank() == 1) {
      e.rank = 1;
      e.dims = {static_cast<std::uint32_t>(t.rows())};
    } else {
      e.rank = 2;
      e.dims = {static_cast<std::uint32_t>(t.rows()), static_cast<std::uint32_t>(t.cols())};
    }
    e.f32.reserve(static_cast<std::size_t>(t.size()));
    for (long r = 0; r < t.rows(); ++r)
      for (long c = 0; c < t.cols(); ++c) e.f32.push_back(static_cast<float>(t.value()(r, c)));
    out.push_back(std::move(e));
  }
}

template <typename S>
void append_adam(std::vector<CheckpointEntry>& out, const std::string& prefix,
                 const AdamState<S>& adam, const ParamRegistry<S>& params) {
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    const auto& name = params.items()[i].first;
    for (const char* slot : {"m", "v"}) {
      const Mat<S>& src = slot[0] == 'm' ? adam.m[i] : adam.v[i];
      CheckpointEntry e;
      e.name = prefix + "/" + slot + "/" + name;
      e.rank = 2;
      e.dims = {static_cast<std::uint32_t>(src.rows()), static_cast<std::uint32_t>(src.cols())};
      e.f32.reserve(static_cast<std::size_t>(src.size()));
      for (long r = 0; r < src.rows(); ++r)
        for (long c = 0; c < src.cols(); ++c) e.f32.push_back(static_cast<float>(src(r, c)));
      out.push_back(std::move(e));
    }
  }
  CheckpointEntry t;
  t.name = prefix + "/t";
  t.rank = 0;
  t.f32 = {static_cast<float>(adam.t)};
  out.push_back(std::move(t));
}

inline CheckpointEntry scalar_entry(const std::string& name, float v) {
  CheckpointEntry e;
  e.name = name;
  e.rank = 0;
  e.f32 = {v};
  return e;
}

inline float get_scalar(const std::map<std::string, const CheckpointEntry*>& idx,
                        const std::string& name) {
  auto it = idx.find(name);
  if (it == idx.end()) throw CheckpointError("checkpoint: missing entry " + name);
  if (it->second->f32.size() != 1) throw CheckpointError("checkpoint: " + name + " is not scalar");
  return it->second->f32[0];
}

template <typename S>
void load_registry(const std::map<std::string, const CheckpointEntry*>& idx,
                   ParamRegistry<S>& params) {
  for (auto& [name, t] : params.items()) {
    auto it = idx.find(name);
    if (it == idx.end()) throw CheckpointError("checkpoint: missing parameter " + name);
    const CheckpointEntry& e = *it->second;
    if (static_cast<long>(e.count()) != t.size())
      throw CheckpointError("checkpoint: size mismatch for " + name);
    std::size_t k = 0;
    for (long r = 0; r < t.rows(); ++r)
      for (long c = 0; c < t.cols(); ++c) t.value()(r, c) = static_cast<S>(e.f32[k++]);
  }
}

template <typename S>
void load_adam(const std::map<std::string, const CheckpointEntry*>& idx, const std::string& prefix,
               AdamState<S>& adam, const ParamRegistry<S>& params) {
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    const auto& name = params.items()[i].first;
    for (const char* slot : {"m", "v"}) {
      auto it = idx.find(prefix + "/" + slot + "/" + name);
      if (it == idx.end()) throw CheckpointError("checkpoint: missing optimizer slot for " + name);
      Mat<S>& dst = slot[0] == 'm' ? adam.m[i] : adam.v[i];
      const CheckpointEntry& e = *it->second;
      if (static_cast<long>(e.count()) != dst.size())
        throw CheckpointError("checkpoint: optimizer size mismatch for " + name);
      std::size_t k = 0;
      for (long r = 0; r < dst.rows(); ++r)
        for (long c = 0; c < dst.cols(); ++c) dst(r, c) = static_cast<S>(e.f32[k++]);
    }
  }
  adam.t = static_cast<long>(get_scalar(idx, prefix + "/t"));
}
}  // namespace detail

template <typename S>
std::vector<CheckpointEntry> trainer_checkpoint(const TrainerState<S>& st) {
  std::vector<CheckpointEntry> out;
  const TrainConfig& c = st.cfg;
  out.push_back(detail::scalar_entry("config/g", static_cast<float>(c.g)));
  out.push_back(detail::scalar_entry("config/k", static_cast<float>(c.k)));
  out.push_back(detail::scalar_entry("config/pretrain_epochs", static_cast<float>(c.pretrain_epochs)));
  out.push_back(detail::scalar_entry("config/tau", c.tau));
  out.push_back(detail::scalar_entry("config/tau_anneal", c.tau_anneal));
  out.push_back(detail::scalar_entry("config/n_experts", static_cast<float>(c.n_experts)));
  out.push_back(detail::scalar_entry("config/shared_experts", c.shared_experts ? 1.f : 0.f));
  out.push_back(detail::scalar_entry("config/batch_size", static_cast<float>(c.batch_size)));
  out.push_back(detail::scalar_entry("config/lr_pretrain", c.lr_pretrain));
  out.push_back(detail::scalar_entry("config/lr_gen_adv", c.lr_gen_adv));
  out.push_back(detail::scalar_entry("config/lr_disc", c.lr_disc));
  out.push_back(detail::scalar_entry("config/clip_norm", c.clip_norm));
  out.push_back(detail::scalar_entry("config/clip_per_tensor", c.clip_per_tensor ? 1.f : 0.f));
  out.push_back(detail::scalar_entry("config/fsa_multiplier", c.fsa_multiplier));
  out.push_back(detail::scalar_entry("config/max_iterations", static_cast<float>(c.max_iterations)));
  out.push_back(detail::scalar_entry("config/eval_interval", static_cast<float>(c.eval_interval)));
  out.push_back(detail::scalar_entry("config/eval_samples", static_cast<float>(c.eval_samples)));
  out.push_back(detail::scalar_entry("config/seq_len", static_cast<float>(c.seq_len)));
  out.push_back(detail::scalar_entry("config/vocab_size", static_cast<float>(c.vocab_size)));
  out.push_back(detail::scalar_entry("config/emb_dim", static_cast<float>(c.emb_dim)));
  out.push_back(detail::scalar_entry("config/hidden_dim", static_cast<float>(c.hidden_dim)));
  out.push_back(detail::scalar_entry("config/mle_baseline", c.mle_baseline ? 1.f : 0.f));
  out.push_back(detail::scalar_entry("train/iteration", static_cast<float>(st.iteration)));
  out.push_back(detail::scalar_entry("train/generator_updates", static_cast<float>(st.generator_updates)));
  out.push_back(detail::scalar_entry("train/pretrained", st.pretrained ? 1.f : 0.f));
  detail::append_registry(out, st.gen_params);
  detail::append_registry(out, st.disc_params);
  detail::append_adam(out, "adam_gen", st.adam_gen, st.gen_params);
  detail::append_adam(out, "adam_disc", st.adam_disc, st.disc_params);
  CheckpointEntry rng;
  rng.name = "rng/state";
  rng.rank = 1;
  rng.dims = {3};
  rng.u64 = {c.seed, st.shuffle_stream.state(), st.gumbel_stream.state()};
  out.push_back(std::move(rng));
  return out;
}

inline TrainConfig config_from_checkpoint(const std::vector<CheckpointEntry>& entries) {
  auto idx = index_checkpoint(entries);
  TrainConfig c;
  c.g = static_cast<int>(detail::get_scalar(idx, "config/g"));
  c.k = static_cast<int>(detail::get_scalar(idx, "config/k"));
  c.pretrain_epochs = static_cast<int>(detail::get_scalar(idx, "config/pretrain_epochs"));
  c.tau = detail::get_scalar(idx, "config/tau");
  c.tau_anneal = detail::get_scalar(idx, "config/tau_anneal");
  c.n_experts = static_cast<int>(detail::get_scalar(idx, "config/n_experts"));
  c.shared_experts = detail::get_scalar(idx, "config/shared_experts") != 0.f;
  c.batch_size = static_cast<int>(detail::get_scalar(idx, "config/batch_size"));
  c.lr_pretrain = detail::get_scalar(idx, "config/lr_pretrain");
  c.lr_gen_adv = detail::get_scalar(idx, "config/lr_gen_adv");
  c.lr_disc = detail::get_scalar(idx, "config/lr_disc");
  c.clip_norm = detail::get_scalar(idx, "config/clip_norm");
  c.clip_per_tensor = detail::get_scalar(idx, "config/clip_per_tensor") != 0.f;
  c.fsa_multiplier = detail::get_scalar(idx, "config/fsa_multiplier");
  c.max_iterations = static_cast<int>(detail::get_scalar(idx, "config/max_iterations"));
  c.eval_interval = static_cast<int>(detail::get_scalar(idx, "config/eval_interval"));
  c.eval_samples = static_cast<int>(detail::get_scalar(idx, "config/eval_samples"));
  c.seq_len = static_cast<int>(detail::get_scalar(idx, "config/seq_len"));
  c.vocab_size = static_cast<int>(detail::get_scalar(idx, "config/vocab_size"));
  c.emb_dim = static_cast<int>(detail::get_scalar(idx, "config/emb_dim"));
  c.hidden_dim = static_cast<int>(detail::get_scalar(idx, "config/hidden_dim"));
  c.mle_baseline = detail::get_scalar(idx, "config/mle_baseline") != 0.f;
  auto it = idx.find("rng/state");
  if (it == idx.end() || it->second->u64.size() != 3)
    throw CheckpointError("checkpoint: missing rng/state");
  c.seed = it->second->u64[0];
  return c;
}

template <typename S>
TrainerState<S> trainer_from_checkpoint(const std::vector<CheckpointEntry>& entries) {
  TrainConfig cfg = config_from_checkpoint(entries);
  TrainerState<S> st = make_trainer<S>(cfg);
  auto idx = index_checkpoint(entries);
  detail::load_registry(idx, st.gen_params);
  detail::load_registry(idx, st.disc_params);
  detail::load_adam(idx, "adam_gen", st.adam_gen, st.gen_params);
  detail::load_adam(idx, "adam_disc", st.adam_disc, st.disc_params);
  st.iteration = static_cast<long>(detail::get_scalar(idx, "train/iteration"));
  st.generator_updates = static_cast<long>(detail::get_scalar(idx, "train/generator_updates"));
  st.pretrained = detail::get_scalar(idx, "train/pretrained") != 0.f;
  const CheckpointEntry& rng = *idx.at("rng/state");
  st.shuffle_stream.set_state(rng.u64[1]);
  st.gumbel_stream.set_state(rng.u64[2]);
  return st;
}

}  // namespace moegan
