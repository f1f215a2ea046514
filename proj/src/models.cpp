#include "salab/models.hpp"

#include <cmath>

#include "salab/checkpoint.hpp"
#include "salab/error.hpp"

namespace salab::models {

using attn::AttentionSegment;
using nn::Segment;
using nn::Tensor;

const char* family_name(Family f) { return f == Family::kLocal ? "att" : "tr"; }

Family parse_family(const std::string& s) {
  if (s == "att" || s == "local") return Family::kLocal;
  if (s == "tr" || s == "hier") return Family::kHier;
  fail(ErrorCode::kConfig, "unknown model family '" + s + "' (expected att or tr)");
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  require(vocab_size >= 2, ErrorCode::kConfig, "model: vocab_size must be at least 2");
  require(embed_dim >= 1 && hidden >= 1, ErrorCode::kConfig, "model: dims must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::kConfig, "model: dropout must lie in [0, 1)");
  require(max_words >= 1 && max_sentences >= 1, ErrorCode::kConfig,
          "model: max_words and max_sentences must be positive");
  require(embed_init > 0.0, ErrorCode::kConfig, "model: embed_init must be positive");
  if (family == Family::kHier) {
    require(word_layers >= 1 && sentence_layers >= 1, ErrorCode::kConfig,
            "model: layer counts must be positive");
    require(word_heads >= 1 && hidden % word_heads == 0 && sentence_heads >= 1 &&
                hidden % sentence_heads == 0,
            ErrorCode::kConfig, "model: hidden must be divisible by the head counts");
  }
}

KeyValues ModelConfig::to_key_values() const {
  return {{"family", family_name(family)},
          {"vocab_size", std::to_string(vocab_size)},
          {"embed_dim", std::to_string(embed_dim)},
          {"hidden", std::to_string(hidden)},
          {"mapping", mapping.to_string()},
          {"dropout", format_double(dropout)},
          {"shared_projection", shared_projection ? "true" : "false"},
          {"word_layers", std::to_string(word_layers)},
          {"sentence_layers", std::to_string(sentence_layers)},
          {"word_heads", std::to_string(word_heads)},
          {"sentence_heads", std::to_string(sentence_heads)},
          {"max_words", std::to_string(max_words)},
          {"max_sentences", std::to_string(max_sentences)},
          {"embed_init", format_double(embed_init)}};
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  const KeyValues known = c.to_key_values();
  for (const auto& [k, v] : kv)
    require(known.count(k) > 0, ErrorCode::kConfig, "model: unknown key '" + k + "'");
  auto size = [&](const char* key, std::size_t fallback) {
    const long long v = kv_int(kv, key, static_cast<long long>(fallback));
    require(v >= 0, ErrorCode::kConfig, std::string("model: negative ") + key);
    return static_cast<std::size_t>(v);
  };
  c.family = parse_family(kv_string(kv, "family", family_name(c.family)));
  c.vocab_size = size("vocab_size", c.vocab_size);
  c.embed_dim = size("embed_dim", c.embed_dim);
  c.hidden = size("hidden", c.hidden);
  c.mapping = MappingKind::parse(kv_string(kv, "mapping", c.mapping.to_string()));
  c.dropout = kv_double(kv, "dropout", c.dropout);
  c.shared_projection = kv_bool(kv, "shared_projection", c.shared_projection);
  c.word_layers = size("word_layers", c.word_layers);
  c.sentence_layers = size("sentence_layers", c.sentence_layers);
  c.word_heads = size("word_heads", c.word_heads);
  c.sentence_heads = size("sentence_heads", c.sentence_heads);
  c.max_words = size("max_words", c.max_words);
  c.max_sentences = size("max_sentences", c.max_sentences);
  c.embed_init = kv_double(kv, "embed_init", c.embed_init);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
ParameterSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterSet<T> ps;
  const CounterRng root(seed);
  std::uint64_t stream = 0;
  auto table = [&](const std::string& name, std::size_t rows, std::size_t cols, bool pad_row) {
    CounterRng rng = root.fork(stream++);
    Tensor<T> t({rows, cols});
    for (T& v : t.data) v = static_cast<T>(rng.normal(0.0, cfg.embed_init));
    if (pad_row)
      for (std::size_t c = 0; c < cols; ++c) t.data[c] = T(0);
    ps.add(name, std::move(t), pad_row);
  };
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    CounterRng rng = root.fork(stream++);
    ps.add(prefix + ".w", attn::init_weight<T>(in, out, rng));
    ps.add(prefix + ".b", Tensor<T>({out}));
  };

  table("embedding", cfg.vocab_size, cfg.embed_dim, true);
  if (cfg.family == Family::kLocal) {
    if (cfg.shared_projection) {
      dense("att.proj", cfg.embed_dim, cfg.hidden);
    } else {
      dense("att.q", cfg.embed_dim, cfg.hidden);
      dense("att.k", cfg.embed_dim, cfg.hidden);
      dense("att.v", cfg.embed_dim, cfg.hidden);
    }
  } else {
    table("pos.word", cfg.max_words, cfg.embed_dim, false);
    dense("proj", cfg.embed_dim, cfg.hidden);
    for (std::size_t l = 0; l < cfg.word_layers; ++l) {
      CounterRng rng = root.fork(stream++);
      attn::add_encoder_layer_params(ps, "word." + std::to_string(l), cfg.hidden, rng);
    }
    table("pos.sentence", cfg.max_sentences, cfg.hidden, false);
    for (std::size_t l = 0; l < cfg.sentence_layers; ++l) {
      CounterRng rng = root.fork(stream++);
      attn::add_encoder_layer_params(ps, "sentence." + std::to_string(l), cfg.hidden, rng);
    }
  }
  dense("out", cfg.hidden, 1);
  return ps;
}

// ---------------------------------------------------------------------------
// Packing

namespace {

struct Packed {
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> word_pos;
  std::vector<AttentionSegment> word_segments;  // one per sentence
  std::vector<Segment> sentence_rows;           // same spans, for pooling
  std::vector<Segment> doc_tokens;              // all tokens of each doc
  std::vector<std::size_t> sentence_pos;
  std::vector<std::size_t> sentence_doc;
  std::vector<AttentionSegment> doc_sentence_segments;
  std::vector<Segment> doc_sentences;
};

Packed pack(const data::Batch& batch, const ModelConfig& cfg) {
  require(batch.size > 0, ErrorCode::kEmpty, "empty batch");
  Packed p;
  for (std::size_t b = 0; b < batch.size; ++b) {
    const std::size_t doc_tok0 = p.ids.size();
    const std::size_t doc_sent0 = p.sentence_rows.size();
    for (std::size_t t = 0; t < batch.max_sentences; ++t) {
      if (!batch.sentence_real(b, t)) continue;
      const std::size_t start = p.ids.size();
      for (std::size_t w = 0; w < batch.max_words; ++w) {
        if (!batch.word_real(b, t, w)) continue;
        p.ids.push_back(batch.id_at(b, t, w));
        p.word_pos.push_back(w);
      }
      const std::size_t len = p.ids.size() - start;
      if (len == 0) continue;
      require(len <= cfg.max_words, ErrorCode::kCapacity,
              "sentence of " + std::to_string(len) + " words exceeds max_words");
      p.word_segments.push_back({start, len, {}});
      p.sentence_rows.push_back({start, len});
      p.sentence_pos.push_back(p.sentence_rows.size() - 1 - doc_sent0);
      p.sentence_doc.push_back(b);
    }
    const std::size_t n_tok = p.ids.size() - doc_tok0;
    const std::size_t n_sent = p.sentence_rows.size() - doc_sent0;
    require(n_tok > 0, ErrorCode::kEmpty, "document " + batch.doc_ids[b] + " has no tokens");
    require(n_sent <= cfg.max_sentences, ErrorCode::kCapacity,
            "document " + batch.doc_ids[b] + " exceeds max_sentences");
    p.doc_tokens.push_back({doc_tok0, n_tok});
    p.doc_sentence_segments.push_back({doc_sent0, n_sent, {}});
    p.doc_sentences.push_back({doc_sent0, n_sent});
  }
  return p;
}

template <typename T>
Var<T> dense(Var<T> x, ParameterSet<T>& ps, const std::string& prefix) {
  Tape<T>& tape = x.tape();
  return nn::linear(x, tape.param(ps.get(prefix + ".w")), tape.param(ps.get(prefix + ".b")));
}

// attention_core appends records segment-major, head-minor.
void tag_records(std::vector<AttentionRecord>& raw, std::size_t heads, std::size_t layer,
                 const std::vector<std::size_t>& seg_doc, const std::vector<std::size_t>* seg_index,
                 std::vector<LocatedRecord>& out) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t seg = i / heads;
    LocatedRecord r;
    r.doc = seg_doc[seg];
    r.sentence = seg_index ? (*seg_index)[seg] : kSentenceLevel;
    r.layer = layer;
    r.record = std::move(raw[i]);
    out.push_back(std::move(r));
  }
  raw.clear();
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward passes

template <typename T>
ForwardResult<T> local_forward(Tape<T>& tape, const data::Batch& batch, const ModelConfig& cfg,
                               ParameterSet<T>& params, bool training, CounterRng& rng,
                               bool keep_records) {
  require(cfg.family == Family::kLocal, ErrorCode::kConfig, "local_forward needs an att config");
  const Packed p = pack(batch, cfg);
  Var<T> x = nn::embedding_lookup<T>(p.ids, tape.param(params.get("embedding")));
  auto project = [&](const char* name) {
    return nn::dropout(dense(x, params, name), cfg.dropout, training, rng);
  };
  Var<T> q, k, v;
  if (cfg.shared_projection) {
    q = k = v = project("att.proj");
  } else {
    q = project("att.q");
    k = project("att.k");
    v = project("att.v");
  }
  std::vector<AttentionRecord> raw;
  Var<T> h = attn::attention_core(q, k, v, p.word_segments, 1, cfg.mapping,
                                  keep_records ? &raw : nullptr);
  h = nn::dropout(h, cfg.dropout, training, rng);
  Var<T> pooled = nn::segment_mean<T>(h, p.doc_tokens);

  ForwardResult<T> out;
  out.logits = dense(pooled, params, "out");
  if (keep_records) {
    std::vector<std::size_t> index(p.sentence_pos);
    tag_records(raw, 1, 0, p.sentence_doc, &index, out.records);
  }
  return out;
}

template <typename T>
ForwardResult<T> hier_forward(Tape<T>& tape, const data::Batch& batch, const ModelConfig& cfg,
                              ParameterSet<T>& params, bool training, CounterRng& rng,
                              bool keep_records) {
  require(cfg.family == Family::kHier, ErrorCode::kConfig, "hier_forward needs a tr config");
  const Packed p = pack(batch, cfg);
  ForwardResult<T> out;
  std::vector<AttentionRecord> raw;
  std::vector<AttentionRecord>* sink = keep_records ? &raw : nullptr;

  Var<T> x = nn::embedding_lookup<T>(p.ids, tape.param(params.get("embedding")));
  x = attn::add_positional_embeddings<T>(x, tape.param(params.get("pos.word")), p.word_pos);
  x = nn::dropout(dense(x, params, "proj"), cfg.dropout, training, rng);

  attn::AttentionConfig word_cfg{cfg.hidden, cfg.word_heads, cfg.mapping, cfg.dropout, true};
  for (std::size_t l = 0; l < cfg.word_layers; ++l) {
    x = attn::transformer_encoder_layer(x, p.word_segments, word_cfg, params,
                                        "word." + std::to_string(l), training, rng, sink);
    if (keep_records) tag_records(raw, cfg.word_heads, l, p.sentence_doc, &p.sentence_pos, out.records);
  }

  Var<T> s = nn::segment_mean<T>(x, p.sentence_rows);
  s = attn::add_positional_embeddings<T>(s, tape.param(params.get("pos.sentence")), p.sentence_pos);

  attn::AttentionConfig sent_cfg{cfg.hidden, cfg.sentence_heads, cfg.mapping, cfg.dropout, true};
  std::vector<std::size_t> docs(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) docs[b] = b;
  for (std::size_t l = 0; l < cfg.sentence_layers; ++l) {
    s = attn::transformer_encoder_layer(s, p.doc_sentence_segments, sent_cfg, params,
                                        "sentence." + std::to_string(l), training, rng, sink);
    if (keep_records) tag_records(raw, cfg.sentence_heads, l, docs, nullptr, out.records);
  }

  Var<T> pooled = nn::segment_mean<T>(s, p.doc_sentences);
  out.logits = dense(pooled, params, "out");
  return out;
}

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const data::Batch& batch, const ModelConfig& cfg,
                         ParameterSet<T>& params, bool training, CounterRng& rng,
                         bool keep_records) {
  return cfg.family == Family::kLocal
             ? local_forward(tape, batch, cfg, params, training, rng, keep_records)
             : hier_forward(tape, batch, cfg, params, training, rng, keep_records);
}

double predict_proba(double logit) {
  require(std::isfinite(logit), ErrorCode::kInvalidArgument, "predict_proba: non-finite logit");
  return nn::stable_sigmoid(logit);
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), params_(init_params<float>(cfg_, seed)) {}

Model::Model(ModelConfig cfg, ParameterSet<float> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  const ParameterSet<float> ref = init_params<float>(cfg_, 0);
  require(ref.size() == params_.size(), ErrorCode::kFormat, "parameter set does not fit the config");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto* p = params_.find(ref[i].name);
    require(p != nullptr && p->value.shape == ref[i].value.shape, ErrorCode::kFormat,
            "parameter '" + ref[i].name + "' missing or misshapen");
  }
}

std::vector<double> Model::logits(const data::Batch& batch) {
  Tape<float> tape(false);
  CounterRng rng(0);
  auto r = forward(tape, batch, cfg_, params_, false, rng, false);
  auto v = r.logits.value();
  return {v.begin(), v.end()};
}

std::vector<double> Model::logits(const std::vector<data::PatientDocument>& docs,
                                  std::size_t batch_size) {
  std::vector<double> out(docs.size(), std::nan(""));
  for (const auto& b : data::pad_and_batch(docs, cfg_.max_words, cfg_.max_sentences, batch_size)) {
    const auto l = logits(b);
    for (std::size_t i = 0; i < b.size; ++i) out[b.doc_index[i]] = l[i];
  }
  return out;
}

void Model::save(const std::string& path) const {
  nn::save_checkpoint(path, params_);
  write_key_values(path + ".config", cfg_.to_key_values());
}

Model Model::load(const std::string& path, std::optional<MappingKind> mapping) {
  ModelConfig cfg = ModelConfig::from_key_values(read_key_values(path + ".config"));
  if (mapping) cfg.mapping = *mapping;
  Model m(cfg, 0);
  nn::load_checkpoint(path, m.params_);
  return m;
}

// ---------------------------------------------------------------------------
// Attention maps

std::vector<LocatedRecord> extract_attention_maps(
    Model& model, const data::TextDocument& doc, const data::Vocabulary& vocab,
    const std::optional<std::set<std::string>>& filter) {
  const ModelConfig& cfg = model.config();
  if (filter)
    for (const auto& tok : *filter)
      if (!vocab.contains(tok)) warn("filter token '" + tok + "' is not in the vocabulary");

  // Surface tokens after the same truncation the batcher applies.
  std::vector<std::vector<std::string>> surface;
  for (const auto& s : doc.sentences) {
    if (s.empty()) continue;
    if (surface.size() == cfg.max_sentences) break;
    surface.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(
                                                    std::min(s.size(), cfg.max_words)));
  }
  require(!surface.empty(), ErrorCode::kEmpty, "document " + doc.id + " has no tokens");

  const auto batches = data::pad_and_batch({data::encode(doc, vocab)}, cfg.max_words,
                                           cfg.max_sentences, 1);
  Tape<float> tape(false);
  CounterRng rng(0);
  auto fwd = forward(tape, batches.at(0), cfg, model.params(), false, rng, true);

  std::vector<std::string> sentence_labels;
  for (std::size_t t = 0; t < surface.size(); ++t)
    sentence_labels.push_back("sentence_" + std::to_string(t));

  std::vector<LocatedRecord> out;
  for (auto& r : fwd.records) {
    if (r.sentence == kSentenceLevel) {
      if (filter) continue;
      r.record.row_labels = r.record.col_labels = sentence_labels;
    } else {
      const auto& words = surface[r.sentence];
      if (filter) {
        bool hit = false;
        for (const auto& w : words) hit = hit || filter->count(w) > 0;
        if (!hit) continue;
      }
      r.record.row_labels = r.record.col_labels = words;
    }
    out.push_back(std::move(r));
  }
  return out;
}

#define SALAB_INSTANTIATE(T)                                                                    \
  template ParameterSet<T> init_params<T>(const ModelConfig&, std::uint64_t);                   \
  template ForwardResult<T> local_forward(Tape<T>&, const data::Batch&, const ModelConfig&,     \
                                          ParameterSet<T>&, bool, CounterRng&, bool);           \
  template ForwardResult<T> hier_forward(Tape<T>&, const data::Batch&, const ModelConfig&,      \
                                         ParameterSet<T>&, bool, CounterRng&, bool);            \
  template ForwardResult<T> forward(Tape<T>&, const data::Batch&, const ModelConfig&,           \
                                    ParameterSet<T>&, bool, CounterRng&, bool);

SALAB_INSTANTIATE(float)
SALAB_INSTANTIATE(double)

#undef SALAB_INSTANTIATE

}  // namespace salab::models
