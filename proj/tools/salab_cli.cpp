// salab: generate the synthetic corpus, train and evaluate classifiers,
// check gradients and export attention heatmaps.
//
// Exit status: 0 on success, 1 when gradcheck finds a failing check, 2 for
// command-line usage errors, 10 + status code for library errors (15 bad
// config, 16 missing or unreadable file, 17 poisoned gradient, 18 undefined
// metric, ...).

#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "salab/salab.h"

namespace {

// Flag name -> config key. Every flag is available on every subcommand.
const std::vector<std::pair<std::string, std::string>> kFlags = {
    {"model", "att | tr"},
    {"mapping", "softmax | sparsemax | entmax15 | entmax:<alpha>"},
    {"epochs", "training epochs"},
    {"lr", "Adam learning rate"},
    {"batch", "batch size"},
    {"hidden", "model width"},
    {"embed-dim", "embedding width"},
    {"max-words", "words kept per sentence"},
    {"max-sents", "sentences kept per document"},
    {"dropout", "dropout rate"},
    {"seed", "root random seed"},
    {"seeds", "repeat training over this many consecutive seeds"},
    {"layers", "encoder layers per level (tr)"},
    {"heads", "attention heads"},
    {"shared-projection", "one projection for Q, K and V (att)"},
    {"embed-init", "standard deviation of initial embeddings"},
    {"min-freq", "minimum token count for the vocabulary"},
    {"data", "dataset directory"},
    {"out", "output directory"},
    {"checkpoint", "checkpoint path (default <out>/best.ckpt)"},
    {"split", "train | valid | test"},
    {"docs", "documents to generate"},
    {"vocab-size", "filler vocabulary size for generation"},
    {"positive-rate", "share of positive documents for generation"},
    {"corpus-min-sents", "fewest sentences per generated document"},
    {"corpus-max-sents", "most sentences per generated document"},
    {"corpus-min-words", "fewest words per generated sentence"},
    {"corpus-max-words", "most words per generated sentence"},
    {"directives", "comma-separated directive tokens"},
    {"filter", "comma-separated tokens selecting heatmap sentences"},
    {"max-heatmaps", "heatmap files to write at most"},
    {"instances", "random instances per gradient check"},
    {"bins", "calibration bins"},
};

int fail(salab_status s) {
  std::fprintf(stderr, "salab: %s error: %s\n", salab_status_name(s), salab_last_error());
  return 10 + static_cast<int>(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse attention text classification"};
  app.set_version_flag("--version", salab_version());
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "key=value file; flags override it");

  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  for (const auto& [flag, help] : kFlags)
    options[flag] = app.add_option("--" + flag, values[flag], help);

  const char* commands[][2] = {
      {"gen-data", "write train/valid/test JSON Lines files"},
      {"train", "train and select the best epoch by validation AUC-ROC"},
      {"eval", "score a split with a checkpoint"},
      {"gradcheck", "finite-difference checks of mappings and models"},
      {"heatmap", "export attention heatmaps as CSV"},
  };
  for (const auto& c : commands) app.add_subcommand(c[0], c[1])->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "salab: usage error: %s\n", e.what());
    return 2;
  }

  salab_config* cfg = nullptr;
  salab_status s = salab_config_create(&cfg);
  if (s != SALAB_OK) return fail(s);
  if (!config_path.empty() && (s = salab_config_load(cfg, config_path.c_str())) != SALAB_OK) {
    salab_config_destroy(cfg);
    return fail(s);
  }
  for (const auto& [flag, opt] : options) {
    if (opt->count() == 0) continue;
    if ((s = salab_config_set(cfg, flag.c_str(), values[flag].c_str())) != SALAB_OK) {
      salab_config_destroy(cfg);
      return fail(s);
    }
  }

  const std::string command = app.get_subcommands().front()->get_name();
  int outcome = 0;
  s = salab_run(command.c_str(), cfg, &outcome);
  salab_config_destroy(cfg);
  if (s != SALAB_OK) return fail(s);
  return outcome;
}
