#pragma once

// Reproducible runs: configuration, the training loop and the five commands
// behind the command-line tool.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "salab/data.hpp"
#include "salab/eval.hpp"
#include "salab/models.hpp"

namespace salab::run {

struct RunConfig {
  // model
  std::string model = "att";
  std::string mapping = "softmax";
  std::size_t hidden = 128;
  std::size_t embed_dim = 100;
  std::size_t max_words = 20;
  std::size_t max_sents = 40;
  double dropout = 0.2;
  bool shared_projection = false;
  std::size_t layers = 1;
  std::size_t heads = 1;
  double embed_init = 1.0;
  // training
  std::size_t epochs = 30;
  double lr = 1e-4;
  std::size_t batch = 16;
  std::uint64_t seed = 13;
  std::size_t seeds = 1;
  int min_freq = 5;
  // paths
  std::string data = "data";
  std::string out = "runs/default";
  std::string checkpoint;  // empty: <out>/best.ckpt
  std::string split = "test";
  // corpus generation
  std::size_t docs = 7143;
  std::size_t vocab_size = 2000;
  double positive_rate = 0.132;
  std::size_t corpus_min_sents = 1;
  std::size_t corpus_max_sents = 8;
  std::size_t corpus_min_words = 4;
  std::size_t corpus_max_words = 14;
  // analysis
  std::string directives = "dnr,dni,cmo";
  std::string filter = "dnr,dni,cmo";
  std::size_t max_heatmaps = 20;
  std::size_t instances = 10;
  std::size_t bins = 10;

  void validate() const;
  KeyValues to_key_values() const;
  /// Unknown keys are a config error. A "command" key is ignored.
  static RunConfig from_key_values(const KeyValues& kv);
  /// Same, starting from `base` instead of the defaults.
  static RunConfig from_key_values(const KeyValues& kv, RunConfig base);

  std::string resolved_checkpoint() const;
  std::vector<std::string> directive_list() const;
  std::vector<std::string> filter_list() const;
};

/// SALAB_THREADS, default 1, never below 1.
std::size_t thread_budget();

models::ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size);
data::SyntheticCorpusConfig corpus_config(const RunConfig& cfg);

struct TrainOptions {
  std::size_t epochs = 30;
  double lr = 1e-4;
  std::size_t batch = 16;
  std::uint64_t seed = 13;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  eval::MetricsReport valid;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  models::Model best;
  models::Model last;
};

/// Adam on mean binary cross-entropy. The best epoch is the one with the
/// highest validation AUC-ROC; ties keep the earlier epoch.
TrainResult train(const models::ModelConfig& mc, const std::vector<data::PatientDocument>& train_docs,
                  const std::vector<data::PatientDocument>& valid_docs, const TrainOptions& opt,
                  const std::function<void(const EpochLog&, models::Model&)>& on_epoch = {});

/// Probabilities for every document that survives truncation.
std::vector<eval::PredictionRecord> predict(models::Model& model,
                                            const std::vector<data::PatientDocument>& docs);

/// train.jsonl / valid.jsonl / test.jsonl plus corpus.config in cfg.data.
void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
/// Trains (once per seed with --seeds N) and writes checkpoints, the epoch
/// log, test metrics and a manifest under cfg.out.
void cmd_train(const RunConfig& cfg, std::ostream& log);
/// Scores cfg.split with the checkpoint and writes metrics and a
/// reliability table.
eval::MetricsReport cmd_eval(const RunConfig& cfg, std::ostream& log);
/// Finite-difference checks of every mapping and both model families.
/// Returns false when any check fails.
bool cmd_gradcheck(const RunConfig& cfg, std::ostream& log);
/// Heatmap CSVs for sentences holding a filter token. Returns the count.
std::size_t cmd_heatmap(const RunConfig& cfg, std::ostream& log);

/// Dispatches by name: gen-data, train, eval, gradcheck, heatmap. Returns the
/// process exit status for the command's own outcome (gradcheck failure is
/// 1); errors propagate as salab::Error.
int run_command(const std::string& command, const RunConfig& cfg, std::ostream& log);

}  // namespace salab::run
