// Command-line entry point: dataset synthesis, training, evaluation,
// ablation, and feature export.
//
// Exit codes: 0 success, 2 usage/config error, 3 runtime numeric failure
// (a non-finite loss aborts with a checkpoint of the last finite state).

#include <CLI11.hpp>

#include "moegan/evaluation.hpp"
#include "moegan/io.hpp"
#include "moegan/training.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace moegan;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<TokenSequence> load_corpus_for(const RunConfig& cfg, const std::string& path) {
  if (path.empty()) throw ConfigError("config: missing corpus path");
  if (cfg.vocab_path.empty()) return load_corpus(path, cfg.train.vocab_size);
  Vocab vocab = load_vocab(cfg.vocab_path);
  if (vocab.size() != cfg.train.vocab_size)
    throw ConfigError("config: vocab file has " + std::to_string(vocab.size()) +
                      " tokens but vocab_size = " + std::to_string(cfg.train.vocab_size));
  return load_corpus(path, cfg.train.vocab_size, &vocab);
}

struct GenDataArgs {
  int vocab = 32;
  int hidden = 32;
  int len = 12;
  int count = 2000;
  std::uint64_t seed = 1;
  std::uint64_t sample_seed = 0;  // 0 = derive from seed
  std::string out;
  std::string oracle_out;
  std::string oracle_in;
};

int cmd_gen_data(const GenDataArgs& a) {
  OracleLstm oracle;
  if (!a.oracle_in.empty()) {
    oracle = oracle_from_checkpoint(read_checkpoint(a.oracle_in));
  } else {
    oracle = build_oracle(a.vocab, a.hidden, a.seed);
  }
  std::uint64_t sample_seed = a.sample_seed ? a.sample_seed : derive_seed(a.seed, "corpus");
  auto corpus = oracle_generate(oracle, a.count, a.len, sample_seed);
  save_corpus(a.out, corpus);
  std::string oracle_path = a.oracle_out.empty() ? a.out + ".oracle" : a.oracle_out;
  write_checkpoint(oracle_path, oracle_checkpoint(oracle));
  std::cout << "wrote " << corpus.size() << " sequences of length " << a.len << " to " << a.out
            << "\noracle checkpoint: " << oracle_path << "\n";
  return 0;
}

// Shared by train and ablate: run one training job against a prepared
// trainer state, writing metrics and checkpoints into out_dir.
void run_training_job(TrainerState<float>& st, const RunConfig& cfg,
                      const std::vector<TokenSequence>& corpus,
                      const std::vector<TokenSequence>& test_corpus, const OracleLstm* oracle,
                      const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream echo(fs::path(out_dir) / "config.effective");
    RunConfig effective = cfg;
    effective.train = st.cfg;
    effective.out_dir = out_dir;
    echo << render_config(effective);
  }
  std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  BleuRefCache cache(test_corpus, 5);
  auto t0 = Clock::now();

  TrainHooks<float> hooks;
  hooks.on_pretrain_epoch = [&](int epoch, double loss) {
    if ((epoch + 1) % 10 == 0 || epoch == 0)
      std::cout << "pretrain epoch " << (epoch + 1) << "/" << st.cfg.pretrain_epochs
                << " mle=" << loss << "\n";
  };
  hooks.on_eval = [&](long iter, const LossReport<float>& report, TrainerState<float>& state) {
    MetricsRow row;
    if (oracle) {
      row = evaluate_state(state, *oracle, test_corpus, cache, iter, report);
    } else {
      RngStream eval_rng(derive_seed(state.cfg.seed, "eval", static_cast<std::uint64_t>(iter)));
      std::vector<TokenSequence> samples =
          generate_hard_batch(state.gen, state.cfg.eval_samples, state.cfg.seq_len, eval_rng);
      row.iteration = iter;
      row.nll_gen = static_cast<double>(nll_gen(state.gen, test_corpus));
      auto b = bleu(samples, cache);
      row.bleu2 = b[0];
      row.bleu3 = b[1];
      row.bleu4 = b[2];
      row.bleu5 = b[3];
      row.loss_d = report.loss_d;
      row.loss_g = report.loss_g;
      row.fsa = report.fsa;
    }
    double elapsed = seconds_since(t0);
    if (cfg.record_wall_time) row.wall_seconds = elapsed;
    append_metrics_row(metrics_path, row);
    write_checkpoint((fs::path(out_dir) / ("ckpt_" + std::to_string(iter) + ".bin")).string(),
                     trainer_checkpoint(state));
    std::cout << "iter " << iter << " nll_oracle=" << row.nll_oracle
              << " nll_gen=" << row.nll_gen
              << " qd_sum=" << quality_diversity_sum(row.nll_oracle, row.nll_gen)
              << " bleu4=" << row.bleu4 << " loss_d=" << row.loss_d << " loss_g=" << row.loss_g
              << " fsa=" << row.fsa << " (" << elapsed << "s)\n";
  };

  try {
    train(st, corpus, hooks);
  } catch (const NonFiniteError&) {
    // Parameters are still the last finite state: updates apply only after
    // the finiteness check.
    write_checkpoint((fs::path(out_dir) / "ckpt_abort.bin").string(), trainer_checkpoint(st));
    throw;
  }
}

// On resume the checkpoint owns the architecture, the seed, and the training
// state; the config file drives the remaining schedule (so a run stopped at
// iteration 100 resumes toward the file's max_iterations). Architecture
// fields must agree.
TrainerState<float> resume_trainer(const RunConfig& cfg, const std::string& resume_path) {
  auto st = trainer_from_checkpoint<float>(read_checkpoint(resume_path));
  const TrainConfig& file = cfg.train;
  auto require_equal = [&](const char* name, auto ckpt_v, auto file_v) {
    if (ckpt_v != file_v)
      throw ConfigError(std::string("resume: config '") + name + "' (" + std::to_string(file_v) +
                        ") does not match the checkpoint (" + std::to_string(ckpt_v) + ")");
  };
  require_equal("vocab_size", st.cfg.vocab_size, file.vocab_size);
  require_equal("emb_dim", st.cfg.emb_dim, file.emb_dim);
  require_equal("hidden_dim", st.cfg.hidden_dim, file.hidden_dim);
  require_equal("n_experts", st.cfg.n_experts, file.n_experts);
  require_equal("shared_experts", static_cast<int>(st.cfg.shared_experts),
                static_cast<int>(file.shared_experts));
  std::uint64_t seed = st.cfg.seed;
  st.cfg = file;
  st.cfg.seed = seed;
  st.cfg.validate();
  return st;
}

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  RunConfig cfg = load_config(config_path);
  TrainerState<float> st = resume_path.empty() ? make_trainer<float>(cfg.train)
                                               : resume_trainer(cfg, resume_path);
  auto corpus = load_corpus_for(cfg, cfg.corpus_path);
  auto test_corpus = cfg.test_corpus_path.empty() ? corpus
                                                  : load_corpus_for(cfg, cfg.test_corpus_path);
  OracleLstm oracle;
  bool have_oracle = !cfg.oracle_path.empty();
  if (have_oracle) oracle = oracle_from_checkpoint(read_checkpoint(cfg.oracle_path));
  run_training_job(st, cfg, corpus, test_corpus, have_oracle ? &oracle : nullptr, cfg.out_dir);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& test_path,
             const std::string& oracle_path, int samples, std::uint64_t seed,
             const std::string& out_csv) {
  auto st = trainer_from_checkpoint<float>(read_checkpoint(ckpt_path));
  auto test_corpus = load_corpus(test_path, st.cfg.vocab_size);
  if (samples > 0) st.cfg.eval_samples = samples;
  st.cfg.seed = seed;
  BleuRefCache cache(test_corpus, 5);
  MetricsRow row;
  if (!oracle_path.empty()) {
    OracleLstm oracle = oracle_from_checkpoint(read_checkpoint(oracle_path));
    row = evaluate_state(st, oracle, test_corpus, cache, st.iteration, LossReport<float>{});
  } else {
    RngStream eval_rng(derive_seed(seed, "eval", static_cast<std::uint64_t>(st.iteration)));
    std::vector<TokenSequence> generated =
        generate_hard_batch(st.gen, st.cfg.eval_samples, st.cfg.seq_len, eval_rng);
    row.iteration = st.iteration;
    row.nll_gen = static_cast<double>(nll_gen(st.gen, test_corpus));
    auto b = bleu(generated, cache);
    row.bleu2 = b[0];
    row.bleu3 = b[1];
    row.bleu4 = b[2];
    row.bleu5 = b[3];
  }
  std::cout << kMetricsHeader << "\n" << format_metrics_row(row) << "\n";
  if (!out_csv.empty()) append_metrics_row(out_csv, row);
  return 0;
}

int cmd_ablate(const std::string& config_path) {
  RunConfig base = load_config(config_path);
  auto corpus = load_corpus_for(base, base.corpus_path);
  auto test_corpus = base.test_corpus_path.empty() ? corpus
                                                   : load_corpus_for(base, base.test_corpus_path);
  OracleLstm oracle;
  bool have_oracle = !base.oracle_path.empty();
  if (have_oracle) oracle = oracle_from_checkpoint(read_checkpoint(base.oracle_path));

  struct Variant {
    const char* name;
    std::function<void(TrainConfig&)> tweak;
  };
  std::vector<Variant> variants = {
      {"full", [](TrainConfig&) {}},
      {"ng1", [](TrainConfig& c) { c.n_experts = 1; }},
      {"fsa0", [](TrainConfig& c) { c.fsa_multiplier = 0.0f; }},
  };

  std::map<std::string, std::vector<double>> final_nll;
  for (const auto& variant : variants) {
    for (std::uint64_t seed : base.ablate_seeds) {
      RunConfig cfg = base;
      cfg.train.seed = seed;
      variant.tweak(cfg.train);
      cfg.out_dir =
          (fs::path(base.out_dir) / (std::string(variant.name) + "_seed" + std::to_string(seed)))
              .string();
      std::cout << "== ablate variant " << variant.name << " seed " << seed << " ==\n";
      auto st = make_trainer<float>(cfg.train);
      run_training_job(st, cfg, corpus, test_corpus, have_oracle ? &oracle : nullptr, cfg.out_dir);

      // Final row's nll_oracle feeds the summary.
      std::ifstream metrics(fs::path(cfg.out_dir) / "metrics.csv");
      std::string line, last;
      std::getline(metrics, line);  // header
      while (std::getline(metrics, line))
        if (!line.empty()) last = line;
      std::istringstream ls(last);
      std::string field;
      std::getline(ls, field, ',');  // iteration
      std::getline(ls, field, ',');  // nll_oracle
      final_nll[variant.name].push_back(std::stod(field));
    }
  }

  fs::create_directories(base.out_dir);
  std::ofstream summary(fs::path(base.out_dir) / "summary.csv");
  summary << "variant,mean_final_nll_oracle,seeds\n";
  std::cout << "== ablation summary (mean final nll_oracle over "
            << base.ablate_seeds.size() << " seeds) ==\n";
  for (const auto& variant : variants) {
    const auto& xs = final_nll[variant.name];
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    summary << variant.name << ',' << format_double(mean) << ',' << xs.size() << "\n";
    std::cout << variant.name << ": " << mean << "\n";
  }
  return 0;
}

int cmd_dump_features(const std::string& ckpt_path, const std::string& corpus_path,
                      const std::string& out_csv, std::uint64_t seed) {
  auto st = trainer_from_checkpoint<float>(read_checkpoint(ckpt_path));
  auto corpus = load_corpus(corpus_path, st.cfg.vocab_size);
  FeatureNetParams<float> frozen = copy_to_auxiliary(st.disc);

  std::ofstream out(out_csv, std::ios::trunc);
  if (!out) throw IoError("dump-features: cannot write " + out_csv);
  auto write_rows = [&](const char* label, const std::vector<TokenSequence>& seqs) {
    const std::size_t chunk = 64;
    for (std::size_t off = 0; off < seqs.size(); off += chunk) {
      std::vector<TokenSequence> part(seqs.begin() + off,
                                      seqs.begin() + std::min(seqs.size(), off + chunk));
      auto feats = features_batch(frozen, part);
      for (long r = 0; r < feats.rows(); ++r) {
        out << label;
        for (long c = 0; c < feats.cols(); ++c)
          out << ',' << format_double(static_cast<double>(feats.value()(r, c)));
        out << "\n";
      }
    }
  };
  write_rows("real", corpus);

  RngStream rng(derive_seed(seed, "dump-features"));
  std::vector<TokenSequence> fake =
      generate_hard_batch(st.gen, static_cast<long>(corpus.size()), st.cfg.seq_len, rng);
  write_rows("fake", fake);
  std::cout << "wrote " << 2 * corpus.size() << " feature rows to " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoEGAN: mixture-of-experts adversarial text generation laboratory"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen_data = app.add_subcommand("gen-data", "Build a synthetic oracle and sample a corpus");
  gen_data->add_option("--vocab", gd.vocab, "Oracle vocabulary size")->capture_default_str();
  gen_data->add_option("--hidden", gd.hidden, "Oracle LSTM hidden size")->capture_default_str();
  gen_data->add_option("--len", gd.len, "Sequence length")->capture_default_str();
  gen_data->add_option("--count", gd.count, "Number of sequences")->capture_default_str();
  gen_data->add_option("--seed", gd.seed, "Oracle build seed")->capture_default_str();
  gen_data->add_option("--sample-seed", gd.sample_seed, "Sampling seed (default: derived)");
  gen_data->add_option("--out", gd.out, "Corpus output path")->required();
  gen_data->add_option("--oracle-out", gd.oracle_out, "Oracle checkpoint path (default: <out>.oracle)");
  gen_data->add_option("--oracle-in", gd.oracle_in, "Reuse an existing oracle checkpoint");

  std::string train_config, train_resume;
  auto* train_cmd = app.add_subcommand("train", "Pretrain and adversarially train");
  train_cmd->add_option("--config", train_config, "Run config file")->required();
  train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");

  std::string eval_ckpt, eval_test, eval_oracle, eval_out = "eval_metrics.csv";
  int eval_samples = 0;
  std::uint64_t eval_seed = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against a test corpus");
  eval_cmd->add_option("--ckpt", eval_ckpt, "Training checkpoint")->required();
  eval_cmd->add_option("--test", eval_test, "Test corpus")->required();
  eval_cmd->add_option("--oracle", eval_oracle, "Oracle checkpoint for NLL_oracle");
  eval_cmd->add_option("--samples", eval_samples, "Generated sample count (default: from ckpt)");
  eval_cmd->add_option("--seed", eval_seed, "Sampling seed")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Metrics CSV path")->capture_default_str();

  std::string ablate_config;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run full / n_g=1 / fsa=0 variants");
  ablate_cmd->add_option("--config", ablate_config, "Run config file")->required();

  std::string df_ckpt, df_corpus, df_out;
  std::uint64_t df_seed = 1;
  auto* df_cmd = app.add_subcommand("dump-features",
                                    "Export frozen-encoder features for real and generated data");
  df_cmd->add_option("--ckpt", df_ckpt, "Training checkpoint")->required();
  df_cmd->add_option("--corpus", df_corpus, "Real corpus")->required();
  df_cmd->add_option("--out", df_out, "Output CSV")->required();
  df_cmd->add_option("--seed", df_seed, "Sampling seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen_data->parsed()) return cmd_gen_data(gd);
    if (train_cmd->parsed()) return cmd_train(train_config, train_resume);
    if (eval_cmd->parsed())
      return cmd_eval(eval_ckpt, eval_test, eval_oracle, eval_samples, eval_seed, eval_out);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_config);
    if (df_cmd->parsed()) return cmd_dump_features(df_ckpt, df_corpus, df_out, df_seed);
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
