#include "salab/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include "json.hpp"
#include <set>
#include <sstream>

#include "salab/error.hpp"

namespace salab::data {

// ---------------------------------------------------------------------------
// Tokenizer

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::string word(text.substr(i, j - i));
      for (char& c : word)
        if (static_cast<unsigned char>(c) < 128) c = static_cast<char>(std::tolower(c));
      std::size_t b = 0;
      std::size_t e = word.size();
      while (b < e && is_punct(static_cast<unsigned char>(word[b]))) ++b;
      while (e > b && is_punct(static_cast<unsigned char>(word[e - 1]))) --e;
      for (std::size_t k = 0; k < b; ++k) out.emplace_back(1, word[k]);
      if (e > b) out.push_back(word.substr(b, e - b));
      for (std::size_t k = e; k < word.size(); ++k) out.emplace_back(1, word[k]);
    }
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& token_streams,
                             int min_freq) {
  require(min_freq >= 1, ErrorCode::kInvalidArgument, "min_freq must be at least 1");
  std::map<std::string, long long> counts;
  for (const auto& stream : token_streams)
    for (const auto& tok : stream) ++counts[tok];
  require(!counts.empty(), ErrorCode::kEmpty, "cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, long long>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_freq && tok != kPadToken && tok != kUnknownToken) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  v.min_freq_ = min_freq;
  v.tokens_ = {kPadToken, kUnknownToken};
  for (auto& [tok, n] : kept) v.tokens_.push_back(tok);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    v.index_[v.tokens_[i]] = static_cast<std::int32_t>(i);
  return v;
}

Vocabulary Vocabulary::build(const std::vector<TextDocument>& docs, int min_freq) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& d : docs)
    for (const auto& s : d.sentences) streams.push_back(s);
  return build(streams, min_freq);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open vocabulary " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#min_freq=", 0) == 0) {
      v.min_freq_ = std::stoi(line.substr(10));
      continue;
    }
    v.index_[line] = static_cast<std::int32_t>(v.tokens_.size());
    v.tokens_.push_back(line);
  }
  require(v.tokens_.size() >= 2 && v.tokens_[0] == kPadToken && v.tokens_[1] == kUnknownToken,
          ErrorCode::kFormat, "vocabulary " + path + " lacks the reserved tokens");
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::string out = "#min_freq=" + std::to_string(min_freq_) + "\n";
  for (const auto& t : tokens_) out += t + "\n";
  write_text_file(path, out);
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorCode::kOutOfRange,
          "token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

PatientDocument encode(const TextDocument& doc, const Vocabulary& vocab) {
  PatientDocument out{doc.id, doc.label, {}};
  for (const auto& s : doc.sentences) {
    std::vector<std::int32_t> ids;
    ids.reserve(s.size());
    for (const auto& t : s) ids.push_back(vocab.id(t));
    out.sentences.push_back(std::move(ids));
  }
  return out;
}

std::vector<PatientDocument> encode(const std::vector<TextDocument>& docs,
                                    const Vocabulary& vocab) {
  std::vector<PatientDocument> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(encode(d, vocab));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticCorpusConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(vocab_size >= 1, ErrorCode::kConfig, "corpus: vocab_size must be positive");
  require(positive_rate > 0.0 && positive_rate < 1.0, ErrorCode::kConfig,
          "corpus: positive_rate must lie in (0, 1)");
  require(prob(p_directive_given_positive) && prob(p_directive_given_negative), ErrorCode::kConfig,
          "corpus: directive probabilities must lie in [0, 1]");
  require(!directive_tokens.empty(), ErrorCode::kConfig, "corpus: no directive tokens");
  require(min_sentences >= 1 && min_sentences <= max_sentences, ErrorCode::kConfig,
          "corpus: bad sentence count range");
  require(min_words >= 1 && min_words <= max_words, ErrorCode::kConfig,
          "corpus: bad sentence length range");
  require(zipf_exponent > 0.0, ErrorCode::kConfig, "corpus: zipf_exponent must be positive");
}

KeyValues SyntheticCorpusConfig::to_key_values() const {
  std::string dirs;
  for (std::size_t i = 0; i < directive_tokens.size(); ++i)
    dirs += (i ? "," : "") + directive_tokens[i];
  return {{"vocab_size", std::to_string(vocab_size)},
          {"n_documents", std::to_string(n_documents)},
          {"positive_rate", format_double(positive_rate)},
          {"directive_tokens", dirs},
          {"p_directive_given_positive", format_double(p_directive_given_positive)},
          {"p_directive_given_negative", format_double(p_directive_given_negative)},
          {"min_sentences", std::to_string(min_sentences)},
          {"max_sentences", std::to_string(max_sentences)},
          {"min_words", std::to_string(min_words)},
          {"max_words", std::to_string(max_words)},
          {"zipf_exponent", format_double(zipf_exponent)},
          {"seed", std::to_string(seed)}};
}

SyntheticCorpusConfig SyntheticCorpusConfig::from_key_values(const KeyValues& kv) {
  SyntheticCorpusConfig c;
  const KeyValues known = c.to_key_values();
  for (const auto& [k, v] : kv)
    require(known.count(k) > 0, ErrorCode::kConfig, "corpus: unknown key '" + k + "'");
  auto size = [&](const char* key, std::size_t fallback) {
    const long long v = kv_int(kv, key, static_cast<long long>(fallback));
    require(v >= 0, ErrorCode::kConfig, std::string("corpus: negative ") + key);
    return static_cast<std::size_t>(v);
  };
  c.vocab_size = size("vocab_size", c.vocab_size);
  c.n_documents = size("n_documents", c.n_documents);
  c.positive_rate = kv_double(kv, "positive_rate", c.positive_rate);
  c.p_directive_given_positive =
      kv_double(kv, "p_directive_given_positive", c.p_directive_given_positive);
  c.p_directive_given_negative =
      kv_double(kv, "p_directive_given_negative", c.p_directive_given_negative);
  c.min_sentences = size("min_sentences", c.min_sentences);
  c.max_sentences = size("max_sentences", c.max_sentences);
  c.min_words = size("min_words", c.min_words);
  c.max_words = size("max_words", c.max_words);
  c.zipf_exponent = kv_double(kv, "zipf_exponent", c.zipf_exponent);
  c.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", static_cast<long long>(c.seed)));
  if (auto it = kv.find("directive_tokens"); it != kv.end()) {
    c.directive_tokens.clear();
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) c.directive_tokens.push_back(tok);
  }
  c.validate();
  return c;
}

std::string filler_token(std::size_t rank) { return "w" + std::to_string(rank); }

ZipfSampler::ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
  require(n >= 1 && exponent > 0.0, ErrorCode::kInvalidArgument, "zipf: bad parameters");
  double total = 0.0;
  for (std::size_t r = 1; r <= n; ++r) {
    total += std::pow(static_cast<double>(r), -exponent);
    cdf_[r - 1] = total;
  }
  for (double& c : cdf_) c /= total;
  cdf_.back() = 1.0;
}

std::size_t ZipfSampler::sample(CounterRng& rng) const {
  const double u = rng.uniform();
  return static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin()) + 1;
}

double ZipfSampler::probability(std::size_t rank) const {
  return rank == 1 ? cdf_[0] : cdf_[rank - 1] - cdf_[rank - 2];
}

std::vector<TextDocument> generate_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  const ZipfSampler zipf(cfg.vocab_size, cfg.zipf_exponent);
  const CounterRng root(cfg.seed);
  const std::size_t width = std::to_string(cfg.n_documents).size();
  std::vector<TextDocument> docs(cfg.n_documents);
  for (std::size_t i = 0; i < cfg.n_documents; ++i) {
    CounterRng rng = root.fork(i);
    TextDocument& doc = docs[i];
    std::string num = std::to_string(i);
    doc.id = "doc" + std::string(width - num.size(), '0') + num;
    doc.label = rng.bernoulli(cfg.positive_rate) ? 1 : 0;
    const std::size_t n_sent =
        cfg.min_sentences + rng.below(cfg.max_sentences - cfg.min_sentences + 1);
    doc.sentences.resize(n_sent);
    for (auto& s : doc.sentences) {
      const std::size_t len = cfg.min_words + rng.below(cfg.max_words - cfg.min_words + 1);
      for (std::size_t w = 0; w < len; ++w) s.push_back(filler_token(zipf.sample(rng)));
    }
    const double p_dir =
        doc.label ? cfg.p_directive_given_positive : cfg.p_directive_given_negative;
    if (rng.bernoulli(p_dir)) {
      const auto& tok = cfg.directive_tokens[rng.below(cfg.directive_tokens.size())];
      auto& s = doc.sentences[rng.below(n_sent)];
      const std::size_t pos = rng.below(s.size() + 1);
      s.insert(s.begin() + static_cast<std::ptrdiff_t>(pos), tok);
    }
  }
  return docs;
}

bool contains_any(const TextDocument& doc, const std::vector<std::string>& tokens) {
  for (const auto& s : doc.sentences)
    for (const auto& t : s)
      if (std::find(tokens.begin(), tokens.end(), t) != tokens.end()) return true;
  return false;
}

// ---------------------------------------------------------------------------
// JSON Lines

std::string to_jsonl(const std::vector<TextDocument>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::json j;
    j["id"] = d.id;
    j["label"] = d.label;
    j["sentences"] = d.sentences;
    out += j.dump() + "\n";
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<TextDocument>& docs) {
  write_text_file(path, to_jsonl(docs));
}

std::vector<TextDocument> read_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open dataset " + path);
  std::vector<TextDocument> docs;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    TextDocument d;
    try {
      const auto j = nlohmann::json::parse(line);
      d.id = j.at("id").get<std::string>();
      d.label = j.at("label").get<int>();
      d.sentences = j.at("sentences").get<std::vector<std::vector<std::string>>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kFormat, where + ": " + e.what());
    }
    require(d.label == 0 || d.label == 1, ErrorCode::kFormat, where + ": label must be 0 or 1");
    require(seen.insert(d.id).second, ErrorCode::kFormat, where + ": duplicate id " + d.id);
    docs.push_back(std::move(d));
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Splits and batching

DatasetSplit split_dataset(const std::vector<TextDocument>& docs, std::uint64_t seed,
                           double train_fraction, double validation_fraction) {
  require(train_fraction > 0 && validation_fraction >= 0 &&
              train_fraction + validation_fraction <= 1.0,
          ErrorCode::kConfig, "bad split fractions");
  std::set<std::string> ids;
  for (const auto& d : docs)
    require(ids.insert(d.id).second, ErrorCode::kFormat, "duplicate document id " + d.id);
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng = CounterRng(seed).fork(0x5b11);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n = static_cast<double>(docs.size());
  const auto n_train = static_cast<std::size_t>(std::floor(n * train_fraction + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * validation_fraction + 1e-9));
  DatasetSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? split.train : i < n_train + n_val ? split.validation : split.test;
    dst.push_back(docs[order[i]]);
  }
  return split;
}

PatientDocument truncate(const PatientDocument& doc, std::size_t max_words,
                         std::size_t max_sentences, Truncation policy) {
  PatientDocument out{doc.id, doc.label, {}};
  std::vector<std::vector<std::int32_t>> nonempty;
  for (const auto& s : doc.sentences)
    if (!s.empty()) nonempty.push_back(s);
  const bool earliest = policy == Truncation::kKeepEarliest;
  const std::size_t n = std::min(nonempty.size(), max_sentences);
  const std::size_t s0 = earliest ? 0 : nonempty.size() - n;
  for (std::size_t i = s0; i < s0 + n; ++i) {
    const auto& s = nonempty[i];
    const std::size_t k = std::min(s.size(), max_words);
    const std::size_t w0 = earliest ? 0 : s.size() - k;
    out.sentences.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(w0),
                               s.begin() + static_cast<std::ptrdiff_t>(w0 + k));
  }
  return out;
}

std::vector<Batch> pad_and_batch(const std::vector<PatientDocument>& docs, std::size_t max_words,
                                 std::size_t max_sentences, std::size_t batch_size,
                                 Truncation policy) {
  require(max_words >= 1 && max_sentences >= 1 && batch_size >= 1, ErrorCode::kInvalidArgument,
          "pad_and_batch: W, T and batch size must be positive");
  std::vector<Batch> batches;
  Batch cur;
  auto start = [&] {
    cur = Batch{};
    cur.max_sentences = max_sentences;
    cur.max_words = max_words;
  };
  start();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const PatientDocument t = truncate(docs[i], max_words, max_sentences, policy);
    if (t.sentences.empty()) {
      warn("document " + docs[i].id + " is empty after truncation; skipped");
      continue;
    }
    const std::size_t cells = max_sentences * max_words;
    cur.ids.resize(cur.ids.size() + cells, Vocabulary::kPad);
    cur.word_mask.resize(cur.word_mask.size() + cells, 0);
    cur.sentence_mask.resize(cur.sentence_mask.size() + max_sentences, 0);
    const std::size_t b = cur.size;
    for (std::size_t s = 0; s < t.sentences.size(); ++s) {
      cur.sentence_mask[b * max_sentences + s] = 1;
      for (std::size_t w = 0; w < t.sentences[s].size(); ++w) {
        const std::size_t at = (b * max_sentences + s) * max_words + w;
        cur.ids[at] = t.sentences[s][w];
        cur.word_mask[at] = 1;
      }
    }
    cur.labels.push_back(t.label);
    cur.doc_ids.push_back(t.id);
    cur.doc_index.push_back(i);
    ++cur.size;
    if (cur.size == batch_size) {
      batches.push_back(std::move(cur));
      start();
    }
  }
  if (cur.size > 0) batches.push_back(std::move(cur));
  return batches;
}

}  // namespace salab::data
