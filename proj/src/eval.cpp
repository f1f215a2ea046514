#include "salab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "salab/error.hpp"

namespace salab::eval {

namespace {

void check_records(const std::vector<PredictionRecord>& r, const char* what) {
  for (const auto& x : r) {
    require(std::isfinite(x.score) && x.score >= 0.0 && x.score <= 1.0, ErrorCode::kInvalidArgument,
            std::string(what) + ": score of " + x.id + " outside [0, 1]");
    require(x.label == 0 || x.label == 1, ErrorCode::kInvalidArgument,
            std::string(what) + ": label of " + x.id + " must be 0 or 1");
  }
}

}  // namespace

double auc_roc(const std::vector<PredictionRecord>& records) {
  check_records(records, "auc_roc");
  std::vector<const PredictionRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->score < b->score; });
  long long pos = 0, neg = 0, half_pairs = 0, neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long long gp = 0, gn = 0;
    while (j < order.size() && order[j]->score == order[i]->score) {
      (order[j]->label ? gp : gn) += 1;
      ++j;
    }
    half_pairs += gp * (2 * neg_below + gn);
    neg_below += gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  require(pos > 0 && neg > 0, ErrorCode::kUndefinedMetric,
          "auc_roc is undefined without both classes");
  return static_cast<double>(half_pairs) / (2.0 * static_cast<double>(pos * neg));
}

double auc_pr(const std::vector<PredictionRecord>& records) {
  check_records(records, "auc_pr");
  std::vector<const PredictionRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->score > b->score || (a->score == b->score && a->id < b->id);
  });
  double total = 0.0;
  long long hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (order[k]->label != 1) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  require(hits > 0, ErrorCode::kUndefinedMetric, "auc_pr is undefined without positives");
  return total / static_cast<double>(hits);
}

double brier(const std::vector<PredictionRecord>& records) {
  check_records(records, "brier");
  require(!records.empty(), ErrorCode::kEmpty, "brier of an empty record list");
  double t = 0.0;
  for (const auto& x : records) t += (x.score - x.label) * (x.score - x.label);
  return t / static_cast<double>(records.size());
}

std::vector<CalibrationBin> calibration_curve(const std::vector<PredictionRecord>& records,
                                              std::size_t bins) {
  check_records(records, "calibration_curve");
  require(bins >= 2, ErrorCode::kInvalidArgument, "calibration_curve needs at least 2 bins");
  std::vector<CalibrationBin> out(bins);
  std::vector<double> score_sum(bins, 0.0);
  std::vector<std::size_t> positives(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = static_cast<double>(b) / static_cast<double>(bins);
    out[b].upper = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (const auto& r : records) {
    auto b = static_cast<std::size_t>(r.score * static_cast<double>(bins));
    b = std::min(b, bins - 1);
    ++out[b].count;
    score_sum[b] += r.score;
    positives[b] += static_cast<std::size_t>(r.label);
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (out[b].empty()) continue;
    out[b].mean_score = score_sum[b] / static_cast<double>(out[b].count);
    out[b].positive_fraction =
        static_cast<double>(positives[b]) / static_cast<double>(out[b].count);
  }
  return out;
}

double max_calibration_gap(const std::vector<CalibrationBin>& bins) {
  double gap = 0.0;
  for (const auto& b : bins)
    if (!b.empty()) gap = std::max(gap, std::abs(b.mean_score - b.positive_fraction));
  return gap;
}

std::string reliability_csv(const std::vector<CalibrationBin>& bins) {
  std::string out = "bin,lower,upper,count,mean_score,positive_fraction,empty\n";
  char buf[256];
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const auto& b = bins[i];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%zu,%.6f,%.6f,%d\n", i, b.lower, b.upper,
                  b.count, b.mean_score, b.positive_fraction, b.empty() ? 1 : 0);
    out += buf;
  }
  return out;
}

MetricsReport evaluate(const std::vector<PredictionRecord>& records, std::size_t bins) {
  MetricsReport m;
  m.n = records.size();
  require(m.n > 0, ErrorCode::kEmpty, "no predictions to evaluate");
  std::size_t pos = 0;
  for (const auto& r : records) pos += static_cast<std::size_t>(r.label == 1);
  m.prevalence = static_cast<double>(pos) / static_cast<double>(m.n);
  m.auc_roc = auc_roc(records);
  m.auc_pr = auc_pr(records);
  m.brier = brier(records);
  m.bins = calibration_curve(records, bins);
  return m;
}

KeyValues MetricsReport::to_key_values() const {
  return {{"n", std::to_string(n)},
          {"prevalence", format_double(prevalence)},
          {"auc_roc", format_double(auc_roc)},
          {"auc_pr", format_double(auc_pr)},
          {"brier", format_double(brier)},
          {"calibration_bins", std::to_string(bins.size())},
          {"calibration_max_gap", format_double(max_calibration_gap(bins))}};
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = n;
  j["prevalence"] = prevalence;
  j["auc_roc"] = auc_roc;
  j["auc_pr"] = auc_pr;
  j["brier"] = brier;
  auto& arr = j["calibration"] = nlohmann::ordered_json::array();
  for (const auto& b : bins) {
    nlohmann::ordered_json e;
    e["lower"] = b.lower;
    e["upper"] = b.upper;
    e["count"] = b.count;
    e["mean_score"] = b.mean_score;
    e["positive_fraction"] = b.positive_fraction;
    e["empty"] = b.empty();
    arr.push_back(e);
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Attention analysis

DirectiveMass directive_attention_mass(models::Model& model,
                                       const std::vector<data::TextDocument>& docs,
                                       const data::Vocabulary& vocab,
                                       const std::set<std::string>& directive_tokens) {
  DirectiveMass out;
  std::size_t zero_cells = 0;
  for (const auto& doc : docs) {
    if (!data::contains_any(doc, {directive_tokens.begin(), directive_tokens.end()})) continue;
    for (const auto& lr : models::extract_attention_maps(model, doc, vocab, directive_tokens)) {
      if (lr.layer != 0 || lr.record.head != 0) continue;
      const auto& rec = lr.record;
      const std::size_t n = rec.size;
      std::vector<bool> is_dir(n);
      for (std::size_t c = 0; c < n; ++c) is_dir[c] = directive_tokens.count(rec.col_labels[c]) > 0;
      double mass = 0.0;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          if (is_dir[c]) {
            mass += rec.at(r, c);
          } else {
            ++out.nondirective_cells;
            zero_cells += rec.at(r, c) == 0.0 ? 1 : 0;
          }
        }
      out.per_sentence.push_back(mass / static_cast<double>(n));
    }
  }
  require(!out.per_sentence.empty(), ErrorCode::kEmpty,
          "no sentence contains a directive token");
  double t = 0.0;
  for (double m : out.per_sentence) t += m;
  out.mean = t / static_cast<double>(out.per_sentence.size());
  out.nondirective_zero_fraction =
      out.nondirective_cells == 0
          ? 0.0
          : static_cast<double>(zero_cells) / static_cast<double>(out.nondirective_cells);
  return out;
}

double support_fraction(const attn::AttentionRecord& record) {
  require(record.size > 0, ErrorCode::kEmpty, "support_fraction of an empty record");
  double t = 0.0;
  for (std::size_t r = 0; r < record.size; ++r)
    t += static_cast<double>(record.row_support(r)) / static_cast<double>(record.size);
  return t / static_cast<double>(record.size);
}

// ---------------------------------------------------------------------------
// Heatmaps

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& origin) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
      field.clear();
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  require(!quoted, ErrorCode::kFormat, origin + ": unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string heatmap_csv(const attn::AttentionRecord& record) {
  const std::size_t n = record.size;
  auto label = [](const std::vector<std::string>& labels, std::size_t i) {
    return i < labels.size() ? labels[i] : std::to_string(i);
  };
  std::string out;
  for (std::size_t c = 0; c < n; ++c) out += "," + csv_field(label(record.col_labels, c));
  out += "\n";
  char buf[32];
  for (std::size_t r = 0; r < n; ++r) {
    out += csv_field(label(record.row_labels, r));
    for (std::size_t c = 0; c < n; ++c) {
      std::snprintf(buf, sizeof(buf), ",%.6f", record.at(r, c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

void export_heatmap(const attn::AttentionRecord& record, const std::string& path) {
  require(record.size > 0 && record.weights.size() == record.size * record.size,
          ErrorCode::kInvalidArgument, "export_heatmap: malformed record for " + path);
  write_text_file(path, heatmap_csv(record));
}

attn::AttentionRecord parse_heatmap_csv(const std::string& text, const std::string& origin) {
  const auto rows = parse_csv(text, origin);
  require(rows.size() >= 2, ErrorCode::kFormat, origin + ": heatmap needs a header and rows");
  const std::size_t n = rows[0].size() - 1;
  require(n == rows.size() - 1, ErrorCode::kFormat, origin + ": heatmap is not square");
  attn::AttentionRecord rec;
  rec.size = n;
  rec.col_labels.assign(rows[0].begin() + 1, rows[0].end());
  rec.key_mask.assign(n, true);
  rec.weights.reserve(n * n);
  for (std::size_t r = 1; r <= n; ++r) {
    require(rows[r].size() == n + 1, ErrorCode::kFormat,
            origin + ": row " + std::to_string(r) + " has the wrong width");
    rec.row_labels.push_back(rows[r][0]);
    for (std::size_t c = 1; c <= n; ++c) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(rows[r][c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used > 0 && used == rows[r][c].size(), ErrorCode::kFormat,
              origin + ": bad weight '" + rows[r][c] + "'");
      rec.weights.push_back(v);
    }
  }
  return rec;
}

attn::AttentionRecord import_heatmap(const std::string& path) {
  return parse_heatmap_csv(read_text_file(path), path);
}

}  // namespace salab::eval
