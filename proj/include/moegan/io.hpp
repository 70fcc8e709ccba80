#pragma once

// File formats: corpus (one sentence per line, whitespace-separated tokens),
// vocab (one token per line, line index = id, ids 0-3 reserved), flat
// key = value run configs, and the metrics CSV.

#include "moegan/evaluation.hpp"
#include "moegan/generator.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace moegan {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Vocab

struct Vocab {
  std::vector<std::string> tokens;  // index = id
  std::map<std::string, int> ids;

  static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;

  int id_of(const std::string& tok) const {
    auto it = ids.find(tok);
    return it == ids.end() ? kUnk : it->second;
  }
  const std::string& token_of(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens.size()))
      throw IoError("vocab: id " + std::to_string(id) + " out of range");
    return tokens[static_cast<std::size_t>(id)];
  }
  int size() const { return static_cast<int>(tokens.size()); }
};

inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"<pad>", "<s>", "</s>", "<unk>"};
  return r;
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("vocab: cannot open " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    v.ids.emplace(line, static_cast<int>(v.tokens.size()));
    v.tokens.push_back(line);
  }
  if (v.size() < 4) throw ConfigError("vocab: fewer than the four reserved tokens in " + path);
  for (int i = 0; i < 4; ++i)
    if (v.tokens[static_cast<std::size_t>(i)] != reserved_tokens()[static_cast<std::size_t>(i)])
      throw ConfigError("vocab: line " + std::to_string(i) + " must be " +
                        reserved_tokens()[static_cast<std::size_t>(i)]);
  return v;
}

inline void save_vocab(const std::string& path, const Vocab& v) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("vocab: cannot write " + path);
  for (const auto& t : v.tokens) out << t << "\n";
}

// ---------------------------------------------------------------------------
// Corpus

// Without a vocab, tokens must be decimal ids below vocab_size.
inline std::vector<TokenSequence> load_corpus(const std::string& path, int vocab_size,
                                              const Vocab* vocab = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("corpus: cannot open " + path);
  std::vector<TokenSequence> corpus;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    TokenSequence seq;
    std::string tok;
    while (ls >> tok) {
      int id;
      if (vocab) {
        id = vocab->id_of(tok);
      } else {
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), id);
        if (ec != std::errc() || p != tok.data() + tok.size())
          throw IoError("corpus: non-numeric token '" + tok + "' at line " +
                        std::to_string(line_no) + " of " + path + " (no vocab given)");
      }
      if (id < 0 || id >= vocab_size)
        throw ConfigError("corpus: token id " + std::to_string(id) + " at line " +
                          std::to_string(line_no) + " exceeds vocab size " +
                          std::to_string(vocab_size));
      seq.push_back(id);
    }
    if (!seq.empty()) corpus.push_back(std::move(seq));
  }
  if (corpus.empty()) throw IoError("corpus: no sentences in " + path);
  return corpus;
}

inline void save_corpus(const std::string& path, const std::vector<TokenSequence>& corpus,
                        const Vocab* vocab = nullptr) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("corpus: cannot write " + path);
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out << ' ';
      if (vocab)
        out << vocab->token_of(seq[i]);
      else
        out << seq[i];
    }
    out << "\n";
  }
  if (!out) throw IoError("corpus: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Run config: flat key = value with '#' comments. Unknown keys are rejected;
// every key has a documented default.

struct RunConfig {
  TrainConfig train;
  std::string corpus_path;
  std::string test_corpus_path;
  std::string vocab_path;   // optional; tokens are decimal ids without it
  std::string oracle_path;  // optional oracle checkpoint for NLL_oracle
  std::string out_dir = "runs/out";
  int checkpoint_interval = 0;   // 0 = checkpoint on the eval grid
  bool record_wall_time = false; // off by default: keeps the CSV byte-reproducible
  std::vector<std::uint64_t> ablate_seeds = {1, 2, 3};
};

namespace detail {
inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
  std::istringstream in(v);
  T out;
  in >> out;
  if (in.fail() || !in.eof())
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}
}  // namespace detail

inline bool apply_config_key(RunConfig& c, const std::string& key, const std::string& value) {
  TrainConfig& t = c.train;
  if (key == "corpus") c.corpus_path = value;
  else if (key == "test_corpus") c.test_corpus_path = value;
  else if (key == "vocab") c.vocab_path = value;
  else if (key == "oracle") c.oracle_path = value;
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "mode") {
    if (value == "moegan") t.mle_baseline = false;
    else if (value == "mle") t.mle_baseline = true;
    else throw ConfigError("config: key 'mode' must be moegan or mle, got '" + value + "'");
  }
  else if (key == "g") t.g = detail::parse_num<int>(value, key);
  else if (key == "k") t.k = detail::parse_num<int>(value, key);
  else if (key == "pretrain_epochs") t.pretrain_epochs = detail::parse_num<int>(value, key);
  else if (key == "tau") t.tau = detail::parse_num<float>(value, key);
  else if (key == "tau_anneal") t.tau_anneal = detail::parse_num<float>(value, key);
  else if (key == "n_experts") t.n_experts = detail::parse_num<int>(value, key);
  else if (key == "shared_experts") t.shared_experts = detail::parse_bool(value, key);
  else if (key == "batch_size") t.batch_size = detail::parse_num<int>(value, key);
  else if (key == "lr_pretrain") t.lr_pretrain = detail::parse_num<float>(value, key);
  else if (key == "lr_gen_adv") t.lr_gen_adv = detail::parse_num<float>(value, key);
  else if (key == "lr_disc") t.lr_disc = detail::parse_num<float>(value, key);
  else if (key == "clip_norm") t.clip_norm = detail::parse_num<float>(value, key);
  else if (key == "clip_per_tensor") t.clip_per_tensor = detail::parse_bool(value, key);
  else if (key == "fsa_multiplier") t.fsa_multiplier = detail::parse_num<float>(value, key);
  else if (key == "max_iterations") t.max_iterations = detail::parse_num<int>(value, key);
  else if (key == "eval_interval") t.eval_interval = detail::parse_num<int>(value, key);
  else if (key == "eval_samples") t.eval_samples = detail::parse_num<int>(value, key);
  else if (key == "seq_len") t.seq_len = detail::parse_num<int>(value, key);
  else if (key == "vocab_size") t.vocab_size = detail::parse_num<int>(value, key);
  else if (key == "emb_dim") t.emb_dim = detail::parse_num<int>(value, key);
  else if (key == "hidden_dim") t.hidden_dim = detail::parse_num<int>(value, key);
  else if (key == "seed") t.seed = detail::parse_num<std::uint64_t>(value, key);
  else if (key == "checkpoint_interval") c.checkpoint_interval = detail::parse_num<int>(value, key);
  else if (key == "record_wall_time") c.record_wall_time = detail::parse_bool(value, key);
  else if (key == "ablate_seeds") {
    c.ablate_seeds.clear();
    std::istringstream in(value);
    std::string part;
    while (std::getline(in, part, ','))
      c.ablate_seeds.push_back(detail::parse_num<std::uint64_t>(detail::trim(part), "ablate_seeds"));
    if (c.ablate_seeds.empty()) throw ConfigError("config: ablate_seeds is empty");
  }
  else return false;
  return true;
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
    std::string key = detail::trim(s.substr(0, eq));
    std::string value = detail::trim(s.substr(eq + 1));
    if (!apply_config_key(c, key, value))
      throw ConfigError("config: unknown key '" + key + "'");
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

// Full echo of the effective config, defaults resolved.
inline std::string render_config(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::ostringstream out;
  out << "corpus = " << c.corpus_path << "\n";
  out << "test_corpus = " << c.test_corpus_path << "\n";
  out << "vocab = " << c.vocab_path << "\n";
  out << "oracle = " << c.oracle_path << "\n";
  out << "out_dir = " << c.out_dir << "\n";
  out << "mode = " << (t.mle_baseline ? "mle" : "moegan") << "\n";
  out << "g = " << t.g << "\n";
  out << "k = " << t.k << "\n";
  out << "pretrain_epochs = " << t.pretrain_epochs << "\n";
  out << "tau = " << t.tau << "\n";
  out << "tau_anneal = " << t.tau_anneal << "\n";
  out << "n_experts = " << t.n_experts << "\n";
  out << "shared_experts = " << (t.shared_experts ? "true" : "false") << "\n";
  out << "batch_size = " << t.batch_size << "\n";
  out << "lr_pretrain = " << t.lr_pretrain << "\n";
  out << "lr_gen_adv = " << t.lr_gen_adv << "\n";
  out << "lr_disc = " << t.lr_disc << "\n";
  out << "clip_norm = " << t.clip_norm << "\n";
  out << "clip_per_tensor = " << (t.clip_per_tensor ? "true" : "false") << "\n";
  out << "fsa_multiplier = " << t.fsa_multiplier << "\n";
  out << "max_iterations = " << t.max_iterations << "\n";
  out << "eval_interval = " << t.eval_interval << "\n";
  out << "eval_samples = " << t.eval_samples << "\n";
  out << "seq_len = " << t.seq_len << "\n";
  out << "vocab_size = " << t.vocab_size << "\n";
  out << "emb_dim = " << t.emb_dim << "\n";
  out << "hidden_dim = " << t.hidden_dim << "\n";
  out << "seed = " << t.seed << "\n";
  out << "checkpoint_interval = " << c.checkpoint_interval << "\n";
  out << "record_wall_time = " << (c.record_wall_time ? "true" : "false") << "\n";
  out << "ablate_seeds = ";
  for (std::size_t i = 0; i < c.ablate_seeds.size(); ++i)
    out << (i ? "," : "") << c.ablate_seeds[i];
  out << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader =
    "iteration,nll_oracle,nll_gen,bleu2,bleu3,bleu4,bleu5,loss_d,loss_g,fsa,wall_seconds";

// Shortest round-trip decimal form, deterministic across runs.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream out;
  out << r.iteration << ',' << format_double(r.nll_oracle) << ',' << format_double(r.nll_gen)
      << ',' << format_double(r.bleu2) << ',' << format_double(r.bleu3) << ','
      << format_double(r.bleu4) << ',' << format_double(r.bleu5) << ','
      << format_double(r.loss_d) << ',' << format_double(r.loss_g) << ','
      << format_double(r.fsa) << ',' << format_double(r.wall_seconds);
  return out.str();
}

// Appends a row, writing the header first when the file is new or empty
// (resumed runs keep appending to the same file).
inline void append_metrics_row(const std::string& path, const MetricsRow& r) {
  bool need_header = true;
  {
    std::ifstream probe(path, std::ios::binary | std::ios::ate);
    if (probe && probe.tellg() > 0) need_header = false;
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("metrics: cannot write " + path);
  if (need_header) out << kMetricsHeader << "\n";
  out << format_metrics_row(r) << "\n";
}

}  // namespace moegan
