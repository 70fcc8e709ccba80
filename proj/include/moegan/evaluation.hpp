#pragma once

// Synthetic-oracle benchmark and quality/diversity metrics.
//
// The oracle is a single-layer LSTM with every parameter drawn i.i.d. from a
// standard normal at build time. NLL_oracle scores generated samples under
// the oracle; NLL_gen scores held-out references under the trained generator
// (by construction the same computation as the MLE loss). BLEU follows the
// whole-test-set reference convention with add-one smoothing for n >= 2.

#include "moegan/checkpoint.hpp"
#include "moegan/objectives.hpp"
#include "moegan/rng.hpp"
#include "moegan/training.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace moegan {

// ---------------------------------------------------------------------------
// Oracle LSTM

struct OracleLstm {
  // Raw matrices; the oracle is immutable after construction and never
  // differentiates, so it stays off the tape.
  Eigen::MatrixXf embedding;                      // V x E
  Eigen::MatrixXf w_in, u_in, w_forget, u_forget; // H x E, H x H
  Eigen::MatrixXf w_out_gate, u_out_gate, w_cand, u_cand;
  Eigen::VectorXf b_in, b_forget, b_out_gate, b_cand;  // H
  Eigen::MatrixXf w_proj;  // V x H
  Eigen::VectorXf b_proj;  // V
  int vocab = 0, hidden = 0, emb = 0;

  struct State {
    Eigen::VectorXf h, c;
  };

  State init_state() const { return {Eigen::VectorXf::Zero(hidden), Eigen::VectorXf::Zero(hidden)}; }

  // Advances on the previous token (-1 means the start of sequence, fed as
  // the embedding of token 0) and returns the next-token distribution.
  Eigen::VectorXd step_probs(State& st, int prev_token) const {
    int row = prev_token < 0 ? 0 : prev_token;
    Eigen::VectorXf x = embedding.row(row).transpose();
    auto sig = [](const Eigen::VectorXf& v) {
      return Eigen::VectorXf(v.unaryExpr([](float z) {
        return z >= 0.f ? 1.f / (1.f + std::exp(-z)) : std::exp(z) / (1.f + std::exp(z));
      }));
    };
    Eigen::VectorXf i = sig(w_in * x + u_in * st.h + b_in);
    Eigen::VectorXf f = sig(w_forget * x + u_forget * st.h + b_forget);
    Eigen::VectorXf o = sig(w_out_gate * x + u_out_gate * st.h + b_out_gate);
    Eigen::VectorXf g = (w_cand * x + u_cand * st.h + b_cand).array().tanh();
    st.c = f.cwiseProduct(st.c) + i.cwiseProduct(g);
    st.h = o.cwiseProduct(st.c.array().tanh().matrix());
    Eigen::VectorXd logits = (w_proj * st.h + b_proj).cast<double>();
    Eigen::ArrayXd ex = (logits.array() - logits.maxCoeff()).exp();
    return (ex / ex.sum()).matrix();
  }
};

inline OracleLstm build_oracle(int vocab_size, int hidden_size, std::uint64_t seed) {
  if (vocab_size < 1 || hidden_size < 1) throw DomainError("build_oracle: sizes must be >= 1");
  OracleLstm o;
  o.vocab = vocab_size;
  o.hidden = hidden_size;
  o.emb = hidden_size;
  RngStream rng(derive_seed(seed, "oracle-init"));
  auto normal_mat = [&](long r, long c) {
    Eigen::MatrixXf m(r, c);
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j) m(i, j) = static_cast<float>(rng.normal());
    return m;
  };
  o.embedding = normal_mat(vocab_size, o.emb);
  o.w_in = normal_mat(hidden_size, o.emb);
  o.u_in = normal_mat(hidden_size, hidden_size);
  o.b_in = normal_mat(hidden_size, 1);
  o.w_forget = normal_mat(hidden_size, o.emb);
  o.u_forget = normal_mat(hidden_size, hidden_size);
  o.b_forget = normal_mat(hidden_size, 1);
  o.w_out_gate = normal_mat(hidden_size, o.emb);
  o.u_out_gate = normal_mat(hidden_size, hidden_size);
  o.b_out_gate = normal_mat(hidden_size, 1);
  o.w_cand = normal_mat(hidden_size, o.emb);
  o.u_cand = normal_mat(hidden_size, hidden_size);
  o.b_cand = normal_mat(hidden_size, 1);
  o.w_proj = normal_mat(vocab_size, hidden_size);
  o.b_proj = normal_mat(vocab_size, 1);
  return o;
}

// Ancestral sampling from any step model (the oracle here; tests use stubs).
template <typename Model>
std::vector<TokenSequence> model_generate(const Model& model, int n, int length,
                                          std::uint64_t seed) {
  if (n < 1 || length < 1) throw DomainError("model_generate: n and length must be >= 1");
  RngStream rng(derive_seed(seed, "oracle-sample"));
  std::vector<TokenSequence> corpus;
  corpus.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    auto st = model.init_state();
    TokenSequence seq;
    seq.reserve(static_cast<std::size_t>(length));
    int prev = -1;
    for (int t = 0; t < length; ++t) {
      Eigen::VectorXd probs = model.step_probs(st, prev);
      double u = rng.uniform();
      double cum = 0;
      int pick = static_cast<int>(probs.size()) - 1;
      for (int v = 0; v < probs.size(); ++v) {
        cum += probs(v);
        if (u < cum) {
          pick = v;
          break;
        }
      }
      seq.push_back(pick);
      prev = pick;
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

inline std::vector<TokenSequence> oracle_generate(const OracleLstm& oracle, int n, int length,
                                                  std::uint64_t seed) {
  return model_generate(oracle, n, length, seed);
}

// Mean over sequences and timesteps of -log p_model(x_t | x_<t).
template <typename Model>
double nll_under_model(const Model& model, const std::vector<TokenSequence>& corpus) {
  if (corpus.empty()) throw DomainError("nll: empty corpus");
  double acc = 0;
  long tokens = 0;
  for (const auto& seq : corpus) {
    if (seq.empty()) throw DomainError("nll: empty sequence");
    auto st = model.init_state();
    int prev = -1;
    for (int id : seq) {
      Eigen::VectorXd probs = model.step_probs(st, prev);
      if (id < 0 || id >= probs.size())
        throw DomainError("nll: token id " + std::to_string(id) + " outside vocabulary");
      acc -= std::log(std::max(probs(id), 1e-300));
      prev = id;
      ++tokens;
    }
  }
  return acc / static_cast<double>(tokens);
}

inline double nll_oracle(const OracleLstm& oracle, const std::vector<TokenSequence>& generated) {
  return nll_under_model(oracle, generated);
}

// NLL of reference samples under the trained generator. Definitionally the
// MLE loss, shared implementation and all.
template <typename S>
S nll_gen(const GeneratorParams<S>& gen, const std::vector<TokenSequence>& test_corpus) {
  return mle_loss(gen, test_corpus).item();
}

inline double quality_diversity_sum(double nll_oracle_v, double nll_gen_v) {
  return nll_oracle_v + nll_gen_v;
}

// ---------------------------------------------------------------------------
// BLEU (Texygen convention: every hypothesis scored against the whole
// reference set; add-one smoothing on modified precisions for n >= 2;
// brevity penalty against the closest reference length).

class BleuRefCache {
 public:
  BleuRefCache(const std::vector<TokenSequence>& references, int max_n)
      : max_n_(max_n), counts_(static_cast<std::size_t>(max_n)) {
    if (references.empty()) throw DomainError("bleu: empty reference corpus");
    if (max_n < 2) throw DomainError("bleu: max_n must be >= 2");
    for (const auto& ref : references) {
      lengths_.push_back(static_cast<long>(ref.size()));
      for (int n = 1; n <= max_n_; ++n) {
        std::map<std::vector<int>, int> local;
        for (std::size_t i = 0; i + n <= ref.size(); ++i)
          ++local[std::vector<int>(ref.begin() + i, ref.begin() + i + n)];
        auto& global = counts_[static_cast<std::size_t>(n - 1)];
        for (const auto& [gram, c] : local) {
          auto it = global.find(gram);
          if (it == global.end())
            global.emplace(gram, c);
          else
            it->second = std::max(it->second, c);
        }
      }
    }
    std::sort(lengths_.begin(), lengths_.end());
  }

  int max_n() const { return max_n_; }

  // Modified n-gram precision numerator and denominator for one hypothesis.
  std::pair<long, long> clipped_matches(const TokenSequence& hyp, int n) const {
    std::map<std::vector<int>, int> local;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i)
      ++local[std::vector<int>(hyp.begin() + i, hyp.begin() + i + n)];
    long matches = 0, total = 0;
    const auto& global = counts_[static_cast<std::size_t>(n - 1)];
    for (const auto& [gram, c] : local) {
      total += c;
      auto it = global.find(gram);
      if (it != global.end()) matches += std::min(c, it->second);
    }
    return {matches, total};
  }

  // Closest reference length; ties resolve to the shorter one.
  long closest_length(long c) const {
    long best = lengths_.front();
    for (long l : lengths_) {
      if (std::abs(l - c) < std::abs(best - c)) best = l;
    }
    return best;
  }

 private:
  int max_n_;
  std::vector<std::map<std::vector<int>, int>> counts_;
  std::vector<long> lengths_;
};

// Sentence BLEU-n for one hypothesis. Empty hypotheses score 0 with a
// warning on stderr.
inline double sentence_bleu(const BleuRefCache& cache, const TokenSequence& hyp, int n) {
  if (hyp.empty()) {
    std::cerr << "bleu: warning: empty hypothesis scored as 0\n";
    return 0.0;
  }
  double log_sum = 0;
  for (int k = 1; k <= n; ++k) {
    auto [matches, total] = cache.clipped_matches(hyp, k);
    double p = k == 1 ? (total == 0 ? 0.0 : static_cast<double>(matches) / total)
                      : static_cast<double>(matches + 1) / static_cast<double>(total + 1);
    if (p <= 0.0) return 0.0;
    log_sum += std::log(p);
  }
  double c = static_cast<double>(hyp.size());
  double r = static_cast<double>(cache.closest_length(hyp.size()));
  double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n);
}

// Corpus BLEU-2..max_n: mean of sentence scores. Index 0 of the result is
// BLEU-2.
inline std::vector<double> bleu(const std::vector<TokenSequence>& hypotheses,
                                const BleuRefCache& cache) {
  if (hypotheses.empty()) throw DomainError("bleu: empty hypothesis corpus");
  std::vector<double> out;
  for (int n = 2; n <= cache.max_n(); ++n) {
    double acc = 0;
    for (const auto& hyp : hypotheses) acc += sentence_bleu(cache, hyp, n);
    out.push_back(acc / static_cast<double>(hypotheses.size()));
  }
  return out;
}

inline std::vector<double> bleu(const std::vector<TokenSequence>& hypotheses,
                                const std::vector<TokenSequence>& references, int max_n) {
  BleuRefCache cache(references, max_n);
  return bleu(hypotheses, cache);
}

// ---------------------------------------------------------------------------
// Evaluation snapshot

struct MetricsRow {
  long iteration = 0;
  double nll_oracle = 0, nll_gen = 0;
  double bleu2 = 0, bleu3 = 0, bleu4 = 0, bleu5 = 0;
  double loss_d = 0, loss_g = 0, fsa = 0;
  double wall_seconds = 0;
};

// One evaluation of a trainer state: sample hard sequences, score them under
// the oracle and against the references, and score the references under the
// generator. Sampling uses a per-evaluation stream derived from the master
// seed and the iteration index, so evaluation never perturbs training
// randomness and resumed runs reproduce it exactly.
template <typename S>
MetricsRow evaluate_state(TrainerState<S>& st, const OracleLstm& oracle,
                          const std::vector<TokenSequence>& test_corpus,
                          const BleuRefCache& cache, long iteration,
                          const LossReport<S>& report) {
  MetricsRow row;
  row.iteration = iteration;
  RngStream eval_rng(derive_seed(st.cfg.seed, "eval", static_cast<std::uint64_t>(iteration)));
  std::vector<TokenSequence> samples =
      generate_hard_batch(st.gen, st.cfg.eval_samples, st.cfg.seq_len, eval_rng);
  row.nll_oracle = nll_oracle(oracle, samples);
  row.nll_gen = static_cast<double>(nll_gen(st.gen, test_corpus));
  std::vector<double> b = bleu(samples, cache);
  row.bleu2 = b.size() > 0 ? b[0] : 0;
  row.bleu3 = b.size() > 1 ? b[1] : 0;
  row.bleu4 = b.size() > 2 ? b[2] : 0;
  row.bleu5 = b.size() > 3 ? b[3] : 0;
  row.loss_d = static_cast<double>(report.loss_d);
  row.loss_g = static_cast<double>(report.loss_g);
  row.fsa = static_cast<double>(report.fsa);
  return row;
}

// ---------------------------------------------------------------------------
// Oracle checkpointing (same container format as training checkpoints)

inline std::vector<CheckpointEntry> oracle_checkpoint(const OracleLstm& o) {
  std::vector<CheckpointEntry> out;
  auto push = [&](const std::string& name, const Eigen::MatrixXf& m) {
    CheckpointEntry e;
    e.name = name;
    e.rank = 2;
    e.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    for (long r = 0; r < m.rows(); ++r)
      for (long c = 0; c < m.cols(); ++c) e.f32.push_back(m(r, c));
    out.push_back(std::move(e));
  };
  out.push_back(detail::scalar_entry("oracle/vocab", static_cast<float>(o.vocab)));
  out.push_back(detail::scalar_entry("oracle/hidden", static_cast<float>(o.hidden)));
  push("oracle/embedding", o.embedding);
  push("oracle/w_in", o.w_in);
  push("oracle/u_in", o.u_in);
  push("oracle/b_in", o.b_in);
  push("oracle/w_forget", o.w_forget);
  push("oracle/u_forget", o.u_forget);
  push("oracle/b_forget", o.b_forget);
  push("oracle/w_out_gate", o.w_out_gate);
  push("oracle/u_out_gate", o.u_out_gate);
  push("oracle/b_out_gate", o.b_out_gate);
  push("oracle/w_cand", o.w_cand);
  push("oracle/u_cand", o.u_cand);
  push("oracle/b_cand", o.b_cand);
  push("oracle/w_proj", o.w_proj);
  push("oracle/b_proj", o.b_proj);
  return out;
}

inline OracleLstm oracle_from_checkpoint(const std::vector<CheckpointEntry>& entries) {
  auto idx = index_checkpoint(entries);
  OracleLstm o;
  o.vocab = static_cast<int>(detail::get_scalar(idx, "oracle/vocab"));
  o.hidden = static_cast<int>(detail::get_scalar(idx, "oracle/hidden"));
  o.emb = o.hidden;
  auto pull = [&](const std::string& name, Eigen::MatrixXf& dst) {
    auto it = idx.find(name);
    if (it == idx.end()) throw CheckpointError("checkpoint: missing " + name);
    const CheckpointEntry& e = *it->second;
    if (e.dims.size() != 2) throw CheckpointError("checkpoint: " + name + " is not a matrix");
    dst.resize(e.dims[0], e.dims[1]);
    std::size_t k = 0;
    for (long r = 0; r < dst.rows(); ++r)
      for (long c = 0; c < dst.cols(); ++c) dst(r, c) = e.f32[k++];
  };
  auto pull_vec = [&](const std::string& name, Eigen::VectorXf& dst) {
    Eigen::MatrixXf m;
    pull(name, m);
    dst = m.col(0);
  };
  pull("oracle/embedding", o.embedding);
  pull("oracle/w_in", o.w_in);
  pull("oracle/u_in", o.u_in);
  pull_vec("oracle/b_in", o.b_in);
  pull("oracle/w_forget", o.w_forget);
  pull("oracle/u_forget", o.u_forget);
  pull_vec("oracle/b_forget", o.b_forget);
  pull("oracle/w_out_gate", o.w_out_gate);
  pull("oracle/u_out_gate", o.u_out_gate);
  pull_vec("oracle/b_out_gate", o.b_out_gate);
  pull("oracle/w_cand", o.w_cand);
  pull("oracle/u_cand", o.u_cand);
  pull_vec("oracle/b_cand", o.b_cand);
  pull("oracle/w_proj", o.w_proj);
  pull_vec("oracle/b_proj", o.b_proj);
  return o;
}

}  // namespace moegan
