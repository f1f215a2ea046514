// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Training logs and artifacts go to the
// directory given as the first argument (default: acceptance_out).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "salab/diagnostics.hpp"
#include "salab/eval.hpp"
#include "salab/kv.hpp"
#include "salab/run.hpp"
#include "salab/simplex.hpp"

using namespace salab;
using simplex::MappingKind;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g(double v) { return fmt("%.3g", v); }
std::string f3(double v) { return fmt("%.3f", v); }
std::string f4(double v) { return fmt("%.4f", v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> normal_vector(CounterRng& rng, std::size_t n, double sd) {
  std::vector<double> z(n);
  for (double& v : z) v = rng.normal(0.0, sd);
  return z;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

const std::vector<MappingKind> kFour{MappingKind::softmax(), MappingKind::sparsemax(),
                                     MappingKind::entmax15(), MappingKind::entmax(1.25)};

// 1 ------------------------------------------------------------------------
Outcome mapping_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  CounterRng rng(101);
  double d_sparse = 0.0, d_entmax = 0.0, d_bisect = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto z = normal_vector(rng, 1 + rng.below(4), 1.5);
    const auto sp = simplex::sparsemax(z).p;
    d_sparse = std::max(d_sparse, max_abs_diff(sp, oracle::simplex_projection(z)));
    d_entmax = std::max(d_entmax, max_abs_diff(simplex::entmax15(z).p,
                                               oracle::entmax_by_bisection(z, 1.5)));
    d_bisect = std::max(d_bisect, max_abs_diff(simplex::entmax_bisect(z, 2.0), sp));
  }
  const double t = seconds_since(t0);
  return {d_sparse <= 1e-6 && d_entmax <= 1e-5 && d_bisect <= 1e-6 && t < 10.0,
          "sparsemax vs projection " + g(d_sparse) + ", entmax15 vs bisection " + g(d_entmax) +
              ", bisect(alpha=2) vs sparsemax " + g(d_bisect) + ", " + f3(t) + " s"};
}

// 2 ------------------------------------------------------------------------
Outcome gradient_soundness() {
  const auto t0 = std::chrono::steady_clock::now();
  const MappingKind kinds[] = {MappingKind::softmax(), MappingKind::sparsemax(),
                               MappingKind::entmax15()};
  std::size_t instances = 0, resamples = 0, failures = 0;
  double worst = 0.0;
  auto take = [&](const diag::CheckOutcome& o) {
    ++instances;
    resamples += static_cast<std::size_t>(o.resamples);
    worst = std::max(worst, o.report.max_rel_error);
    if (!o.report.passed) ++failures;
  };
  std::uint64_t seed = 0;
  for (const auto& k : kinds) {
    for (int i = 0; i < 40; ++i) take(diag::check_mapping(k, 5000 + seed++));
    for (int i = 0; i < 15; ++i) take(diag::check_model(models::Family::kLocal, k, 5000 + seed++));
    for (int i = 0; i < 15; ++i) take(diag::check_model(models::Family::kHier, k, 5000 + seed++));
  }
  const double t = seconds_since(t0);
  return {failures == 0 && instances >= 200 && worst <= 1e-4 && t < 60.0,
          std::to_string(instances) + " instances, " + std::to_string(failures) +
              " failed, max rel error " + g(worst) + ", " + std::to_string(resamples) +
              " boundary resamples, " + f3(t) + " s"};
}

// 3 ------------------------------------------------------------------------
Outcome simplex_invariants() {
  CounterRng rng(303);
  std::size_t violations = 0;
  double worst_sum = 0.0, worst_shift = 0.0;
  for (const auto& kind : kFour) {
    for (int trial = 0; trial < 10000; ++trial) {
      const std::size_t n = 2 + rng.below(63);
      const auto z = normal_vector(rng, n, 3.0);
      const auto p = simplex::apply(kind, z).p;
      double total = 0.0;
      for (double v : p) {
        violations += v < 0.0;
        total += v;
      }
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));

      std::vector<double> shifted = z;
      const double c = rng.uniform(-10.0, 10.0);
      for (double& v : shifted) v += c;
      worst_shift = std::max(worst_shift, max_abs_diff(simplex::apply(kind, shifted).p, p));

      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
      std::vector<double> zp(n);
      for (std::size_t i = 0; i < n; ++i) zp[i] = z[perm[i]];
      const auto pp = simplex::apply(kind, zp).p;
      for (std::size_t i = 0; i < n; ++i) violations += pp[i] != p[perm[i]];

      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
      for (std::size_t i = 1; i < n; ++i) violations += p[order[i]] < p[order[i - 1]];
    }
  }
  return {violations == 0 && worst_sum <= 1e-8 && worst_shift <= 1e-9,
          "4 mappings x 10000 vectors, max |sum-1| " + g(worst_sum) + ", max shift diff " +
              g(worst_shift) + ", " + std::to_string(violations) +
              " sign/permutation/order violations"};
}

// 4 ------------------------------------------------------------------------
Outcome interpolation_ordering() {
  CounterRng rng(404);
  std::size_t bad_max = 0, bad_zero = 0;
  std::size_t zs_total = 0, ze_total = 0, zp_total = 0;
  auto zeros = [](const std::vector<double>& p) {
    return static_cast<std::size_t>(std::count(p.begin(), p.end(), 0.0));
  };
  for (int i = 0; i < 1000; ++i) {
    const auto z = normal_vector(rng, 2 + rng.below(30), 2.0);
    const auto s = simplex::softmax(z);
    const auto e = simplex::entmax15(z).p;
    const auto p = simplex::sparsemax(z).p;
    const double ms = *std::max_element(s.begin(), s.end());
    const double me = *std::max_element(e.begin(), e.end());
    const double mp = *std::max_element(p.begin(), p.end());
    bad_max += !(ms <= me + 1e-12 && me <= mp + 1e-12);
    const auto zs = zeros(s), ze = zeros(e), zp = zeros(p);
    bad_zero += !(zs == 0 && zs <= ze && ze <= zp);
    zs_total += zs;
    ze_total += ze;
    zp_total += zp;
  }
  return {bad_max == 0 && bad_zero == 0,
          "1000 vectors, " + std::to_string(bad_max) + " max-entry and " +
              std::to_string(bad_zero) + " zero-count violations; zeros softmax " +
              std::to_string(zs_total) + ", entmax15 " + std::to_string(ze_total) +
              ", sparsemax " + std::to_string(zp_total)};
}

// 5 ------------------------------------------------------------------------
Outcome metric_oracles() {
  CounterRng rng(505);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(19);
    std::vector<eval::PredictionRecord> r;
    std::vector<oracle::Scored> o;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = static_cast<double>(rng.below(8)) / 7.0;
      const int y = i == 0 ? 1 : i == 1 ? 0 : static_cast<int>(rng.below(2));
      const std::string id = "x" + std::to_string(rng.below(100000));
      r.push_back({id, s, y});
      o.push_back({id, s, y});
    }
    mismatches += eval::auc_roc(r) != oracle::auc_roc_pairwise(o);
    mismatches += eval::auc_pr(r) != oracle::average_precision_bruteforce(o);
    mismatches += eval::brier(r) != oracle::brier_bruteforce(o);
  }
  const double ap = eval::auc_pr({{"a", 0.9, 0}, {"b", 0.8, 1}, {"c", 0.7, 1}});
  const double br = eval::brier({{"a", 0.8, 1}, {"b", 0.4, 0}});
  return {mismatches == 0 && std::abs(ap - 0.5833) <= 1e-4 && std::abs(br - 0.10) <= 1e-4,
          "100 instances, " + std::to_string(mismatches) + " mismatches; AP example " + f4(ap) +
              ", Brier example " + f4(br)};
}

// 6, 7, 9 ----------------------------------------------------------------
struct AttRun {
  std::string mapping;
  double test_auc = 0.0;
  double seconds = 0.0;
  std::size_t reliability_rows = 0;
  double miscalibration = 0.0;  // count-weighted mean of positive_fraction - mean_score
  eval::DirectiveMass mass;
};

std::vector<AttRun> train_att_models(const fs::path& out, std::ostream& log) {
  run::RunConfig base;
  base.data = (out / "data").string();
  base.epochs = 10;
  base.lr = 2e-4;
  run::run_command("gen-data", base, log);
  const auto test_docs = data::read_jsonl((out / "data" / "test.jsonl").string());

  std::vector<AttRun> runs;
  for (const char* m : {"softmax", "entmax15", "sparsemax"}) {
    run::RunConfig c = base;
    c.mapping = m;
    c.out = (out / ("att_" + std::string(m))).string();
    AttRun r;
    r.mapping = m;
    const auto t0 = std::chrono::steady_clock::now();
    run::run_command("train", c, log);
    r.seconds = seconds_since(t0);
    const auto metrics = read_key_values((fs::path(c.out) / "metrics_test.txt").string());
    r.test_auc = std::stod(metrics.at("auc_roc"));

    std::ifstream rel(fs::path(c.out) / "reliability_test.csv");
    std::string line;
    std::getline(rel, line);
    double weighted = 0.0, count = 0.0;
    while (std::getline(rel, line)) {
      ++r.reliability_rows;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      const double n = std::stod(cells.at(3));
      if (n > 0) {
        weighted += n * (std::stod(cells.at(5)) - std::stod(cells.at(4)));
        count += n;
      }
    }
    r.miscalibration = count > 0 ? weighted / count : 0.0;

    auto model = models::Model::load((fs::path(c.out) / "best.ckpt").string());
    const auto vocab = data::Vocabulary::load((fs::path(c.out) / "vocab.txt").string());
    const auto dirs = c.directive_list();
    r.mass = eval::directive_attention_mass(model, test_docs, vocab,
                                            std::set<std::string>(dirs.begin(), dirs.end()));
    runs.push_back(r);
  }
  return runs;
}

Outcome end_to_end(const std::vector<AttRun>& runs) {
  bool ok = true;
  std::string d;
  for (const auto& r : runs) {
    ok = ok && r.test_auc >= 0.90 && r.seconds < 300.0;
    d += (d.empty() ? "" : ", ") + r.mapping + " test AUC " + f4(r.test_auc) + " (" +
         fmt("%.0f", r.seconds) + " s)";
  }
  return {ok, d + "; 10 epochs, threshold 0.90"};
}

Outcome directive_mass(const std::vector<AttRun>& runs) {
  const AttRun& soft = runs.at(0);
  const AttRun& sparse = runs.at(2);
  const bool ok = sparse.mass.mean > soft.mass.mean && sparse.mass.nondirective_zero_fraction >= 0.30;
  return {ok, "mean mass sparsemax " + f4(sparse.mass.mean) + " vs softmax " + f4(soft.mass.mean) +
                  " (entmax15 " + f4(runs.at(1).mass.mean) + "), sparsemax zero share of " +
                  "non-directive cells " + f4(sparse.mass.nondirective_zero_fraction) + " over " +
                  std::to_string(sparse.mass.per_sentence.size()) + " sentences"};
}

Outcome calibration(const std::vector<AttRun>& runs) {
  CounterRng rng(909);
  std::vector<eval::PredictionRecord> r;
  for (int i = 0; i < 10000; ++i) {
    const double s = rng.uniform();
    r.push_back({"c" + std::to_string(i), s, rng.uniform() < s ? 1 : 0});
  }
  const double gap = eval::max_calibration_gap(eval::calibration_curve(r, 10));
  bool csv_ok = true;
  std::string d = "synthetic max bin gap " + f4(gap);
  for (const auto& a : runs) {
    csv_ok = csv_ok && a.reliability_rows == 10;
    d += "; " + a.mapping + " " + std::to_string(a.reliability_rows) + " bins, " +
         (a.miscalibration > 0 ? "underconfident" : "overconfident") + " by " +
         f4(std::abs(a.miscalibration));
  }
  return {gap <= 0.05 && csv_ok, d};
}

// 8 ------------------------------------------------------------------------
Outcome sentence_support(const fs::path& out, std::ostream& log) {
  run::RunConfig base;
  base.model = "tr";
  base.data = (out / "long_data").string();
  base.docs = 1500;
  base.corpus_min_sents = 20;
  base.corpus_max_sents = 40;
  base.max_sents = 40;
  base.hidden = 64;
  base.embed_dim = 50;
  base.lr = 5e-4;
  base.epochs = 2;
  run::run_command("gen-data", base, log);
  const auto test_docs = data::read_jsonl((out / "long_data" / "test.jsonl").string());

  std::map<std::string, std::vector<double>> fractions;
  for (const char* m : {"sparsemax", "softmax"}) {
    run::RunConfig c = base;
    c.mapping = m;
    c.out = (out / ("tr_" + std::string(m))).string();
    run::run_command("train", c, log);
    auto model = models::Model::load((fs::path(c.out) / "best.ckpt").string());
    const auto vocab = data::Vocabulary::load((fs::path(c.out) / "vocab.txt").string());
    for (const auto& doc : test_docs) {
      if (doc.sentences.size() < 20) continue;
      for (const auto& rec : models::extract_attention_maps(model, doc, vocab))
        if (rec.sentence == models::kSentenceLevel)
          fractions[m].push_back(eval::support_fraction(rec.record));
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  const auto& sp = fractions["sparsemax"];
  const auto& so = fractions["softmax"];
  if (sp.empty() || so.empty()) return {false, "no documents with 20 or more sentences"};
  const double med = median(sp);
  const bool soft_full = std::all_of(so.begin(), so.end(), [](double f) { return f == 1.0; });
  return {med < 0.5 && soft_full,
          "Tr-sparsemax median support fraction " + f4(med) + " over " +
              std::to_string(sp.size()) + " documents; Tr-softmax " +
              (soft_full ? "1.0 on every document" : "below 1.0 somewhere") +
              " (min " + f4(*std::min_element(so.begin(), so.end())) + ")"};
}

// 10 -----------------------------------------------------------------------
Outcome determinism(const fs::path& out, std::ostream& log) {
  run::RunConfig base;
  base.data = (out / "det_data").string();
  base.docs = 1000;
  base.epochs = 2;
  base.mapping = "sparsemax";
  base.max_heatmaps = 10;
  run::run_command("gen-data", base, log);
  std::vector<fs::path> dirs;
  for (const char* tag : {"det_a", "det_b"}) {
    run::RunConfig c = base;
    c.out = (out / tag).string();
    fs::remove_all(c.out);
    run::run_command("train", c, log);
    run::run_command("heatmap", c, log);
    c.split = "valid";
    c.out = (out / tag / "eval").string();
    c.checkpoint = (out / tag / "best.ckpt").string();
    run::run_command("eval", c, log);
    dirs.push_back(out / tag);
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dirs[0]);
    if (rel.filename() == "manifest.txt") continue;  // records the output path
    ++compared;
    const auto other = dirs[1] / rel;
    if (!fs::exists(other) || read_text_file(e.path().string()) != read_text_file(other.string()))
      ++differing;
  }
  std::size_t heatmaps = 0;
  for (const auto& e : fs::directory_iterator(dirs[0] / "heatmaps")) heatmaps += e.is_regular_file();
  return {differing == 0 && heatmaps > 0 && compared > heatmaps,
          std::to_string(compared) + " files compared (checkpoints, metrics, " +
              std::to_string(heatmaps) + " heatmaps), " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out);
  std::ofstream log(out / "acceptance.log");
  int failed = 0;
  auto report = [&](int n, const char* title, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d: %s: %s\n", o.pass ? "PASS" : "FAIL", n, title, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "mapping correctness", mapping_correctness);
  report(2, "gradient soundness", gradient_soundness);
  report(3, "simplex invariants", simplex_invariants);
  report(4, "interpolation ordering", interpolation_ordering);
  report(5, "metric oracles", metric_oracles);

  std::vector<AttRun> att;
  std::string att_error;
  try {
    att = train_att_models(out, log);
  } catch (const std::exception& e) {
    att_error = e.what();
  }
  auto with_att = [&](Outcome (*f)(const std::vector<AttRun>&)) {
    return [&, f] {
      if (!att_error.empty()) return Outcome{false, "training failed: " + att_error};
      return f(att);
    };
  };
  report(6, "end-to-end learning", with_att(end_to_end));
  report(7, "directive attention mass", with_att(directive_mass));
  report(8, "sentence-level sparsity", [&] { return sentence_support(out, log); });
  report(9, "calibration", with_att(calibration));
  report(10, "determinism", [&] { return determinism(out, log); });

  std::printf("%d of 10 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
