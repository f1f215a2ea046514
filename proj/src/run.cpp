#include "salab/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "salab/diagnostics.hpp"
#include "salab/error.hpp"
#include "salab/optim.hpp"

namespace salab::run {

namespace fs = std::filesystem;
using models::Model;
using models::ModelConfig;

// ---------------------------------------------------------------------------
// Config

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

void RunConfig::validate() const {
  models::parse_family(model);
  simplex::MappingKind::parse(mapping);
  require(epochs >= 1, ErrorCode::kConfig, "epochs must be at least 1");
  require(lr > 0.0 && std::isfinite(lr), ErrorCode::kConfig, "lr must be positive");
  require(batch >= 1, ErrorCode::kConfig, "batch must be at least 1");
  require(seeds >= 1, ErrorCode::kConfig, "seeds must be at least 1");
  require(min_freq >= 1, ErrorCode::kConfig, "min_freq must be at least 1");
  require(bins >= 2, ErrorCode::kConfig, "bins must be at least 2");
  require(instances >= 1, ErrorCode::kConfig, "instances must be at least 1");
  require(!directive_list().empty(), ErrorCode::kConfig, "no directive tokens given");
  require(split == "train" || split == "valid" || split == "test", ErrorCode::kConfig,
          "unknown split '" + split + "' (expected train, valid or test)");
}

KeyValues RunConfig::to_key_values() const {
  auto u = [](std::size_t v) { return std::to_string(v); };
  return {{"model", model},
          {"mapping", mapping},
          {"hidden", u(hidden)},
          {"embed_dim", u(embed_dim)},
          {"max_words", u(max_words)},
          {"max_sents", u(max_sents)},
          {"dropout", format_double(dropout)},
          {"shared_projection", shared_projection ? "true" : "false"},
          {"layers", u(layers)},
          {"heads", u(heads)},
          {"embed_init", format_double(embed_init)},
          {"epochs", u(epochs)},
          {"lr", format_double(lr)},
          {"batch", u(batch)},
          {"seed", std::to_string(seed)},
          {"seeds", u(seeds)},
          {"min_freq", std::to_string(min_freq)},
          {"data", data},
          {"out", out},
          {"checkpoint", checkpoint},
          {"split", split},
          {"docs", u(docs)},
          {"vocab_size", u(vocab_size)},
          {"positive_rate", format_double(positive_rate)},
          {"corpus_min_sents", u(corpus_min_sents)},
          {"corpus_max_sents", u(corpus_max_sents)},
          {"corpus_min_words", u(corpus_min_words)},
          {"corpus_max_words", u(corpus_max_words)},
          {"directives", directives},
          {"filter", filter},
          {"max_heatmaps", u(max_heatmaps)},
          {"instances", u(instances)},
          {"bins", u(bins)}};
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, RunConfig{}); }

RunConfig RunConfig::from_key_values(const KeyValues& kv, RunConfig c) {
  const KeyValues known = c.to_key_values();
  for (const auto& [k, v] : kv)
    require(k == "command" || known.count(k) > 0, ErrorCode::kConfig, "unknown config key '" + k + "'");
  auto size = [&](const char* key, std::size_t fallback) {
    const long long v = kv_int(kv, key, static_cast<long long>(fallback));
    require(v >= 0, ErrorCode::kConfig, std::string("negative value for ") + key);
    return static_cast<std::size_t>(v);
  };
  c.model = kv_string(kv, "model", c.model);
  c.mapping = kv_string(kv, "mapping", c.mapping);
  c.hidden = size("hidden", c.hidden);
  c.embed_dim = size("embed_dim", c.embed_dim);
  c.max_words = size("max_words", c.max_words);
  c.max_sents = size("max_sents", c.max_sents);
  c.dropout = kv_double(kv, "dropout", c.dropout);
  c.shared_projection = kv_bool(kv, "shared_projection", c.shared_projection);
  c.layers = size("layers", c.layers);
  c.heads = size("heads", c.heads);
  c.embed_init = kv_double(kv, "embed_init", c.embed_init);
  c.epochs = size("epochs", c.epochs);
  c.lr = kv_double(kv, "lr", c.lr);
  c.batch = size("batch", c.batch);
  c.seed = static_cast<std::uint64_t>(size("seed", c.seed));
  c.seeds = size("seeds", c.seeds);
  c.min_freq = static_cast<int>(size("min_freq", static_cast<std::size_t>(c.min_freq)));
  c.data = kv_string(kv, "data", c.data);
  c.out = kv_string(kv, "out", c.out);
  c.checkpoint = kv_string(kv, "checkpoint", c.checkpoint);
  c.split = kv_string(kv, "split", c.split);
  c.docs = size("docs", c.docs);
  c.vocab_size = size("vocab_size", c.vocab_size);
  c.positive_rate = kv_double(kv, "positive_rate", c.positive_rate);
  c.corpus_min_sents = size("corpus_min_sents", c.corpus_min_sents);
  c.corpus_max_sents = size("corpus_max_sents", c.corpus_max_sents);
  c.corpus_min_words = size("corpus_min_words", c.corpus_min_words);
  c.corpus_max_words = size("corpus_max_words", c.corpus_max_words);
  c.directives = kv_string(kv, "directives", c.directives);
  c.filter = kv_string(kv, "filter", c.filter);
  c.max_heatmaps = size("max_heatmaps", c.max_heatmaps);
  c.instances = size("instances", c.instances);
  c.bins = size("bins", c.bins);
  return c;
}

std::string RunConfig::resolved_checkpoint() const {
  return checkpoint.empty() ? (fs::path(out) / "best.ckpt").string() : checkpoint;
}

std::vector<std::string> RunConfig::directive_list() const { return split_list(directives); }
std::vector<std::string> RunConfig::filter_list() const { return split_list(filter); }

std::size_t thread_budget() {
  const char* env = std::getenv("SALAB_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  require(end && *end == '\0', ErrorCode::kConfig, std::string("bad SALAB_THREADS '") + env + "'");
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size) {
  ModelConfig m;
  m.family = models::parse_family(cfg.model);
  m.vocab_size = vocab_size;
  m.embed_dim = cfg.embed_dim;
  m.hidden = cfg.hidden;
  m.mapping = simplex::MappingKind::parse(cfg.mapping);
  m.dropout = cfg.dropout;
  m.shared_projection = cfg.shared_projection;
  m.word_layers = m.sentence_layers = cfg.layers;
  m.word_heads = m.sentence_heads = cfg.heads;
  m.max_words = cfg.max_words;
  m.max_sentences = cfg.max_sents;
  m.embed_init = cfg.embed_init;
  m.validate();
  return m;
}

data::SyntheticCorpusConfig corpus_config(const RunConfig& cfg) {
  data::SyntheticCorpusConfig c;
  c.vocab_size = cfg.vocab_size;
  c.n_documents = cfg.docs;
  c.positive_rate = cfg.positive_rate;
  c.directive_tokens = cfg.directive_list();
  c.min_sentences = cfg.corpus_min_sents;
  c.max_sentences = cfg.corpus_max_sents;
  c.min_words = cfg.corpus_min_words;
  c.max_words = cfg.corpus_max_words;
  c.seed = cfg.seed;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Training

std::vector<eval::PredictionRecord> predict(Model& model,
                                            const std::vector<data::PatientDocument>& docs) {
  const auto logits = model.logits(docs);
  std::vector<eval::PredictionRecord> out;
  out.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i)
    if (!std::isnan(logits[i]))
      out.push_back({docs[i].id, models::predict_proba(logits[i]), docs[i].label});
  return out;
}

TrainResult train(const ModelConfig& mc, const std::vector<data::PatientDocument>& train_docs,
                  const std::vector<data::PatientDocument>& valid_docs, const TrainOptions& opt,
                  const std::function<void(const EpochLog&, models::Model&)>& on_epoch) {
  require(opt.epochs >= 1 && opt.batch >= 1 && opt.lr > 0, ErrorCode::kConfig,
          "train: epochs, batch and lr must be positive");
  // Drop documents the batcher would skip, once, so epochs do not re-warn.
  std::vector<data::PatientDocument> docs;
  for (const auto& d : train_docs) {
    if (data::truncate(d, mc.max_words, mc.max_sentences).sentences.empty()) {
      warn("training document " + d.id + " is empty after truncation; skipped");
      continue;
    }
    docs.push_back(d);
  }
  require(!docs.empty(), ErrorCode::kEmpty, "no training documents");

  const CounterRng root(opt.seed);
  Model model(mc, root.fork(1).next_u64());
  nn::Adam<float> adam(model.params(), {opt.lr});
  std::vector<EpochLog> history;
  std::optional<nn::ParameterSet<float>> best_params;
  std::size_t best_epoch = 0;
  double best_auc = -1.0;

  std::vector<std::size_t> order(docs.size());
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng shuffle = root.fork(1000 + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    std::vector<data::PatientDocument> shuffled;
    shuffled.reserve(docs.size());
    for (std::size_t i : order) shuffled.push_back(docs[i]);

    CounterRng drop = root.fork(1'000'000 + epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& b : data::pad_and_batch(shuffled, mc.max_words, mc.max_sentences, opt.batch)) {
      nn::Tape<float> tape;
      auto fwd = models::forward(tape, b, mc, model.params(), true, drop);
      auto loss = nn::bce_with_logits(fwd.logits, std::span<const int>(b.labels));
      tape.backward(loss);
      adam.step();
      model.params().zero_grad();
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(b.size);
      seen += b.size;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.valid = eval::evaluate(predict(model, valid_docs));
    if (log.valid.auc_roc > best_auc) {
      best_auc = log.valid.auc_roc;
      best_epoch = epoch;
      best_params = model.params();
    }
    history.push_back(log);
    if (on_epoch) on_epoch(log, model);
  }
  Model best(mc, *best_params);
  return TrainResult{std::move(history), best_epoch, std::move(best), std::move(model)};
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct LoadedData {
  std::vector<data::TextDocument> train, valid, test;
};

fs::path split_path(const std::string& dir, const std::string& split) {
  return fs::path(dir) / (split + ".jsonl");
}

LoadedData load_data(const RunConfig& cfg) {
  LoadedData d;
  d.train = data::read_jsonl(split_path(cfg.data, "train").string());
  d.valid = data::read_jsonl(split_path(cfg.data, "valid").string());
  d.test = data::read_jsonl(split_path(cfg.data, "test").string());
  return d;
}

const std::vector<data::TextDocument>& pick_split(const LoadedData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "valid") return d.valid;
  if (split == "test") return d.test;
  fail(ErrorCode::kConfig, "unknown split '" + split + "' (expected train, valid or test)");
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec, ErrorCode::kIo, "cannot create directory " + p.string() + ": " + ec.message());
}

void write_manifest(const RunConfig& cfg, const std::string& command, const fs::path& dir) {
  KeyValues kv = cfg.to_key_values();
  kv["command"] = command;
  write_key_values((dir / "manifest.txt").string(), kv);
}

void write_report(const eval::MetricsReport& m, const fs::path& dir, const std::string& tag) {
  write_key_values((dir / ("metrics_" + tag + ".txt")).string(), m.to_key_values());
  write_text_file((dir / ("metrics_" + tag + ".json")).string(), m.to_json());
  write_text_file((dir / ("reliability_" + tag + ".csv")).string(), eval::reliability_csv(m.bins));
}

void write_predictions(const std::vector<eval::PredictionRecord>& p, const fs::path& path) {
  std::string out = "id,label,score\n";
  for (const auto& r : p) out += r.id + "," + std::to_string(r.label) + "," + format_double(r.score) + "\n";
  write_text_file(path.string(), out);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

eval::MetricsReport train_one(const RunConfig& cfg, const LoadedData& d, const fs::path& dir,
                              std::ostream& log) {
  ensure_dir(dir);
  write_manifest(cfg, "train", dir);
  const auto vocab = data::Vocabulary::build(d.train, cfg.min_freq);
  vocab.save((dir / "vocab.txt").string());
  const ModelConfig mc = model_config(cfg, vocab.size());
  const auto train_docs = data::encode(d.train, vocab);
  const auto valid_docs = data::encode(d.valid, vocab);

  std::string epoch_log = "epoch,train_loss,valid_auc_roc,valid_auc_pr,valid_brier\n";
  TrainOptions opt{cfg.epochs, cfg.lr, cfg.batch, cfg.seed};
  auto result = train(mc, train_docs, valid_docs, opt, [&](const EpochLog& e, models::Model&) {
    epoch_log += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
                 format_double(e.valid.auc_roc) + "," + format_double(e.valid.auc_pr) + "," +
                 format_double(e.valid.brier) + "\n";
    log << "epoch " << e.epoch << " loss " << fixed(e.train_loss) << " valid auc_roc "
        << fixed(e.valid.auc_roc) << " auc_pr " << fixed(e.valid.auc_pr) << " brier "
        << fixed(e.valid.brier) << "\n";
  });
  write_text_file((dir / "train_log.csv").string(), epoch_log);
  result.best.save((dir / "best.ckpt").string());
  result.last.save((dir / "last.ckpt").string());

  const auto& best = result.history[result.best_epoch - 1];
  write_report(best.valid, dir, "valid");
  const auto test_pred = predict(result.best, data::encode(d.test, vocab));
  write_predictions(test_pred, dir / "predictions_test.csv");
  const auto test = eval::evaluate(test_pred, cfg.bins);
  write_report(test, dir, "test");
  log << "best epoch " << result.best_epoch << " test auc_roc " << fixed(test.auc_roc)
      << " auc_pr " << fixed(test.auc_pr) << " brier " << fixed(test.brier) << "\n";
  return test;
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
  return {m, sd};
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  const auto cc = corpus_config(cfg);
  const auto docs = data::generate_synthetic_corpus(cc);
  const auto split = data::split_dataset(docs, cfg.seed);
  ensure_dir(cfg.data);
  data::write_jsonl(split_path(cfg.data, "train").string(), split.train);
  data::write_jsonl(split_path(cfg.data, "valid").string(), split.validation);
  data::write_jsonl(split_path(cfg.data, "test").string(), split.test);
  write_key_values((fs::path(cfg.data) / "corpus.config").string(), cc.to_key_values());
  std::size_t pos = 0;
  for (const auto& d : docs) pos += static_cast<std::size_t>(d.label);
  log << "wrote " << docs.size() << " documents (" << split.train.size() << " train, "
      << split.validation.size() << " valid, " << split.test.size() << " test), prevalence "
      << fixed(static_cast<double>(pos) / static_cast<double>(docs.size())) << " to " << cfg.data
      << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const LoadedData d = load_data(cfg);
  if (cfg.seeds == 1) {
    train_one(cfg, d, cfg.out, log);
    return;
  }
  ensure_dir(cfg.out);
  write_manifest(cfg, "train", cfg.out);
  std::vector<double> roc, pr, br;
  for (std::size_t i = 0; i < cfg.seeds; ++i) {
    RunConfig c = cfg;
    c.seed = cfg.seed + i;
    c.seeds = 1;
    log << "seed " << c.seed << "\n";
    const auto m = train_one(c, d, fs::path(cfg.out) / ("seed_" + std::to_string(c.seed)), log);
    roc.push_back(m.auc_roc);
    pr.push_back(m.auc_pr);
    br.push_back(m.brier);
  }
  KeyValues summary{{"seeds", std::to_string(cfg.seeds)}};
  for (auto [name, vals] : {std::pair{"auc_roc", &roc}, {"auc_pr", &pr}, {"brier", &br}}) {
    const auto [m, sd] = mean_sd(*vals);
    summary[std::string("test_") + name + "_mean"] = format_double(m);
    summary[std::string("test_") + name + "_sd"] = format_double(sd);
    log << name << " " << fixed(m) << " ± " << fixed(sd) << "\n";
  }
  write_key_values((fs::path(cfg.out) / "summary.txt").string(), summary);
}

eval::MetricsReport cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const LoadedData d = load_data(cfg);
  const std::string ckpt = cfg.resolved_checkpoint();
  const fs::path ckdir = fs::path(ckpt).parent_path();
  Model model = Model::load(ckpt);
  const auto vocab = data::Vocabulary::load((ckdir / "vocab.txt").string());
  const auto pred = predict(model, data::encode(pick_split(d, cfg.split), vocab));
  const auto report = eval::evaluate(pred, cfg.bins);
  ensure_dir(cfg.out);
  write_manifest(cfg, "eval", cfg.out);
  write_report(report, cfg.out, cfg.split);
  write_predictions(pred, fs::path(cfg.out) / ("predictions_" + cfg.split + ".csv"));
  log << cfg.split << " n " << report.n << " auc_roc " << fixed(report.auc_roc) << " auc_pr "
      << fixed(report.auc_pr) << " brier " << fixed(report.brier) << "\n";
  return report;
}

bool cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  std::vector<simplex::MappingKind> kinds{simplex::MappingKind::softmax(),
                                          simplex::MappingKind::entmax15(),
                                          simplex::MappingKind::sparsemax()};
  const auto requested = simplex::MappingKind::parse(cfg.mapping);
  if (std::find(kinds.begin(), kinds.end(), requested) == kinds.end()) kinds.push_back(requested);

  // Jobs are independent; results are written to fixed slots so the report
  // does not depend on the thread count.
  struct Job {
    int kind;  // 0 mapping, 1 att, 2 tr
    simplex::MappingKind mapping;
    std::uint64_t seed;
    diag::CheckOutcome outcome;
  };
  std::vector<Job> jobs;
  const CounterRng root(cfg.seed);
  std::uint64_t stream = 0;
  for (int kind = 0; kind < 3; ++kind)
    for (const auto& m : kinds)
      for (std::size_t i = 0; i < cfg.instances; ++i)
        jobs.push_back({kind, m, root.fork(stream++).next_u64(), {}});

  std::size_t next = 0;
  std::mutex mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= jobs.size() || error) return;
        i = next++;
      }
      try {
        Job& j = jobs[i];
        j.outcome = j.kind == 0   ? diag::check_mapping(j.mapping, j.seed)
                    : j.kind == 1 ? diag::check_model(models::Family::kLocal, j.mapping, j.seed)
                                  : diag::check_model(models::Family::kHier, j.mapping, j.seed);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(thread_budget(), jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  bool all = true;
  std::string report = "check,instances,max_rel_error,passed\n";
  for (std::size_t start = 0; start < jobs.size(); start += cfg.instances) {
    double worst = 0.0;
    bool ok = true;
    for (std::size_t i = start; i < start + cfg.instances; ++i) {
      worst = std::max(worst, jobs[i].outcome.report.max_rel_error);
      ok = ok && jobs[i].outcome.report.passed;
    }
    all = all && ok;
    const std::string& name = jobs[start].outcome.name;
    report += name + "," + std::to_string(cfg.instances) + "," + format_double(worst) + "," +
              (ok ? "1" : "0") + "\n";
    log << (ok ? "PASS " : "FAIL ") << name << " max_rel_error " << worst << "\n";
  }
  ensure_dir(cfg.out);
  write_manifest(cfg, "gradcheck", cfg.out);
  write_text_file((fs::path(cfg.out) / "gradcheck.csv").string(), report);
  return all;
}

std::size_t cmd_heatmap(const RunConfig& cfg, std::ostream& log) {
  const LoadedData d = load_data(cfg);
  const std::string ckpt = cfg.resolved_checkpoint();
  Model model = Model::load(ckpt);
  const auto vocab =
      data::Vocabulary::load((fs::path(ckpt).parent_path() / "vocab.txt").string());
  const auto tokens = cfg.filter_list();
  std::optional<std::set<std::string>> filter;
  if (!tokens.empty()) filter = std::set<std::string>(tokens.begin(), tokens.end());

  const fs::path dir = fs::path(cfg.out) / "heatmaps";
  ensure_dir(dir);
  write_manifest(cfg, "heatmap", cfg.out);
  std::size_t written = 0;
  bool warned = false;
  for (const auto& doc : pick_split(d, cfg.split)) {
    if (written >= cfg.max_heatmaps) break;
    if (filter && !data::contains_any(doc, tokens)) continue;
    // Unknown filter tokens are reported once, not per document.
    if (warned) set_warning_sink([](const std::string&) {});
    std::vector<models::LocatedRecord> maps;
    try {
      maps = models::extract_attention_maps(model, doc, vocab, filter);
    } catch (...) {
      set_warning_sink(nullptr);
      throw;
    }
    set_warning_sink(nullptr);
    warned = true;
    for (const auto& m : maps) {
      if (written >= cfg.max_heatmaps) break;
      std::string name = doc.id;
      name += m.sentence == models::kSentenceLevel ? "_sentences" : "_s" + std::to_string(m.sentence);
      if (m.layer > 0) name += "_l" + std::to_string(m.layer);
      if (m.record.head > 0) name += "_h" + std::to_string(m.record.head);
      eval::export_heatmap(m.record, (dir / (name + ".csv")).string());
      ++written;
    }
  }
  log << "wrote " << written << " heatmaps to " << dir.string() << "\n";
  return written;
}

int run_command(const std::string& command, const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (command == "gen-data") {
    cmd_gen_data(cfg, log);
  } else if (command == "train") {
    cmd_train(cfg, log);
  } else if (command == "eval") {
    cmd_eval(cfg, log);
  } else if (command == "gradcheck") {
    return cmd_gradcheck(cfg, log) ? 0 : 1;
  } else if (command == "heatmap") {
    cmd_heatmap(cfg, log);
  } else {
    fail(ErrorCode::kConfig, "unknown command '" + command + "'");
  }
  return 0;
}

}  // namespace salab::run
