#include "salab/salab.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "salab/error.hpp"
#include "salab/eval.hpp"
#include "salab/kv.hpp"
#include "salab/run.hpp"

struct salab_config {
  salab::KeyValues kv;
};

struct salab_model {
  salab::models::Model model;
};

namespace {

thread_local std::string g_last_error;

salab_status to_status(salab::ErrorCode c) { return static_cast<salab_status>(static_cast<int>(c)); }

template <typename F>
salab_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return SALAB_OK;
  } catch (const salab::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SALAB_ERR_INTERNAL;
  }
}

void need(bool cond, const char* what) {
  salab::require(cond, salab::ErrorCode::kInvalidArgument, what);
}

void copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf) return;
  salab::require(cap >= s.size() + 1, salab::ErrorCode::kOutOfRange,
                 "buffer of " + std::to_string(cap) + " bytes, need " + std::to_string(s.size() + 1));
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

std::string normalize_key(std::string key) {
  for (char& c : key)
    if (c == '-') c = '_';
  return key;
}

std::vector<salab::eval::PredictionRecord> records(const double* scores, const int* labels,
                                                   std::size_t n) {
  need(scores && labels, "scores and labels must not be null");
  const int width = static_cast<int>(std::to_string(n).size());
  std::vector<salab::eval::PredictionRecord> r(n);
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(id, sizeof id, "%0*zu", width, i);
    r[i] = {id, scores[i], labels[i]};
  }
  return r;
}

salab_status metric(const double* scores, const int* labels, std::size_t n, double* out,
                    double (*fn)(const std::vector<salab::eval::PredictionRecord>&)) {
  return guarded([&] {
    need(out != nullptr, "out must not be null");
    *out = fn(records(scores, labels, n));
  });
}

}  // namespace

extern "C" {

const char* salab_status_name(salab_status status) {
  if (status == SALAB_OK) return "ok";
  if (status == SALAB_ERR_INTERNAL) return "internal";
  if (status < SALAB_OK || status > SALAB_ERR_INTERNAL) return "unknown";
  return salab::error_code_name(static_cast<salab::ErrorCode>(status));
}

const char* salab_last_error(void) { return g_last_error.c_str(); }

const char* salab_version(void) { return "1.0.0"; }

salab_status salab_config_create(salab_config** out) {
  return guarded([&] {
    need(out != nullptr, "out must not be null");
    *out = new salab_config{};
  });
}

void salab_config_destroy(salab_config* cfg) { delete cfg; }

salab_status salab_config_set(salab_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg && key && value, "config, key and value must not be null");
    salab::KeyValues next = cfg->kv;
    next[normalize_key(key)] = value;
    salab::run::RunConfig::from_key_values(next);
    cfg->kv = std::move(next);
  });
}

salab_status salab_config_load(salab_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg && path, "config and path must not be null");
    salab::KeyValues next = cfg->kv;
    for (auto& [k, v] : salab::read_key_values(path)) next[normalize_key(k)] = v;
    salab::run::RunConfig::from_key_values(next);
    cfg->kv = std::move(next);
  });
}

salab_status salab_config_get(const salab_config* cfg, const char* key, char* buf, size_t cap,
                              size_t* needed) {
  return guarded([&] {
    need(cfg && key, "config and key must not be null");
    const auto resolved = salab::run::RunConfig::from_key_values(cfg->kv).to_key_values();
    const auto it = resolved.find(normalize_key(key));
    salab::require(it != resolved.end(), salab::ErrorCode::kConfig,
                   std::string("unknown config key '") + key + "'");
    copy_out(it->second, buf, cap, needed);
  });
}

salab_status salab_config_dump(const salab_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg != nullptr, "config must not be null");
    copy_out(salab::format_key_values(salab::run::RunConfig::from_key_values(cfg->kv).to_key_values()),
             buf, cap, needed);
  });
}

salab_status salab_run(const char* command, const salab_config* cfg, int* outcome) {
  return guarded([&] {
    need(command && cfg, "command and config must not be null");
    const auto rc = salab::run::RunConfig::from_key_values(cfg->kv);
    const int r = salab::run::run_command(command, rc, std::cout);
    std::cout.flush();
    if (outcome) *outcome = r;
  });
}

salab_status salab_map(const char* mapping, const double* z, size_t n, double* p) {
  return guarded([&] {
    need(mapping && z && p, "mapping, z and p must not be null");
    need(n > 0, "empty input");
    const auto kind = salab::simplex::MappingKind::parse(mapping);
    const auto r = salab::simplex::apply(kind, std::span<const double>(z, n));
    std::copy(r.p.begin(), r.p.end(), p);
  });
}

salab_status salab_map_backward(const char* mapping, const double* p, const double* u, size_t n,
                                double* dz) {
  return guarded([&] {
    need(mapping && p && u && dz, "mapping, p, u and dz must not be null");
    need(n > 0, "empty input");
    const auto kind = salab::simplex::MappingKind::parse(mapping);
    const auto g = salab::simplex::mapping_backward(std::span<const double>(p, n),
                                                    std::span<const double>(u, n), kind);
    std::copy(g.begin(), g.end(), dz);
  });
}

salab_status salab_auc_roc(const double* scores, const int* labels, size_t n, double* out) {
  return metric(scores, labels, n, out, salab::eval::auc_roc);
}

salab_status salab_auc_pr(const double* scores, const int* labels, size_t n, double* out) {
  return metric(scores, labels, n, out, salab::eval::auc_pr);
}

salab_status salab_brier(const double* scores, const int* labels, size_t n, double* out) {
  return metric(scores, labels, n, out, salab::eval::brier);
}

salab_status salab_model_load(const char* checkpoint, const char* mapping, salab_model** out) {
  return guarded([&] {
    need(checkpoint && out, "checkpoint and out must not be null");
    std::optional<salab::simplex::MappingKind> m;
    if (mapping) m = salab::simplex::MappingKind::parse(mapping);
    *out = new salab_model{salab::models::Model::load(checkpoint, m)};
  });
}

void salab_model_destroy(salab_model* model) { delete model; }

salab_status salab_model_mapping(const salab_model* model, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(model != nullptr, "model must not be null");
    copy_out(model->model.config().mapping.to_string(), buf, cap, needed);
  });
}

salab_status salab_model_score(salab_model* model, const char* vocab_path, const char* jsonl_path,
                               double* probs, size_t cap, size_t* count) {
  return guarded([&] {
    need(model && vocab_path && jsonl_path && count, "model, paths and count must not be null");
    const auto vocab = salab::data::Vocabulary::load(vocab_path);
    const auto docs = salab::data::encode(salab::data::read_jsonl(jsonl_path), vocab);
    *count = docs.size();
    salab::require(probs != nullptr && cap >= docs.size(), salab::ErrorCode::kOutOfRange,
                   "output holds " + std::to_string(cap) + " values, need " +
                       std::to_string(docs.size()));
    const auto logits = model->model.logits(docs);
    for (std::size_t i = 0; i < logits.size(); ++i)
      probs[i] = std::isnan(logits[i]) ? logits[i] : salab::models::predict_proba(logits[i]);
  });
}

}  // extern "C"
