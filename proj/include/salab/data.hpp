#pragma once

// Tokenization, vocabulary, dataset files, padding/batching and the
// synthetic directive-word corpus.

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "salab/kv.hpp"
#include "salab/rng.hpp"

namespace salab::data {

/// Lowercases ASCII, splits on whitespace, and splits leading/trailing
/// punctuation characters off as their own tokens.
std::vector<std::string> tokenize(std::string_view text);

/// A document as stored on disk: token strings grouped into sentences.
struct TextDocument {
  std::string id;
  int label = 0;
  std::vector<std::vector<std::string>> sentences;

  friend bool operator==(const TextDocument&, const TextDocument&) = default;
};

/// A document encoded against a vocabulary.
struct PatientDocument {
  std::string id;
  int label = 0;
  std::vector<std::vector<std::int32_t>> sentences;
};

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnknown = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnknownToken = "<unk>";

  /// Tokens seen at least `min_freq` times get ids from 2 upward, ordered by
  /// (frequency desc, token asc).
  static Vocabulary build(const std::vector<std::vector<std::string>>& token_streams,
                          int min_freq);
  static Vocabulary build(const std::vector<TextDocument>& docs, int min_freq);

  /// A "#min_freq=N" header, then one token per line in id order.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  std::int32_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  int min_frequency() const { return min_freq_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  int min_freq_ = 1;
};

PatientDocument encode(const TextDocument& doc, const Vocabulary& vocab);
std::vector<PatientDocument> encode(const std::vector<TextDocument>& docs,
                                    const Vocabulary& vocab);

struct SyntheticCorpusConfig {
  std::size_t vocab_size = 2000;  // filler tokens
  std::size_t n_documents = 7143;
  double positive_rate = 0.132;
  std::vector<std::string> directive_tokens{"dnr", "dni", "cmo"};
  double p_directive_given_positive = 0.9;
  double p_directive_given_negative = 0.05;
  std::size_t min_sentences = 1;
  std::size_t max_sentences = 8;
  std::size_t min_words = 4;
  std::size_t max_words = 14;
  double zipf_exponent = 1.1;
  std::uint64_t seed = 13;

  void validate() const;
  KeyValues to_key_values() const;
  /// Unknown keys are a config error.
  static SyntheticCorpusConfig from_key_values(const KeyValues& kv);
};

/// Filler token of Zipf rank r (1-based).
std::string filler_token(std::size_t rank);

/// Sampling from p(r) proportional to r^-s over ranks 1..n via an inverted
/// cumulative table.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent);
  std::size_t sample(CounterRng& rng) const;
  double probability(std::size_t rank) const;

 private:
  std::vector<double> cdf_;
};

std::vector<TextDocument> generate_synthetic_corpus(const SyntheticCorpusConfig& cfg);

bool contains_any(const TextDocument& doc, const std::vector<std::string>& tokens);

/// JSON Lines, one document per line: {"id", "label", "sentences"}.
void write_jsonl(const std::string& path, const std::vector<TextDocument>& docs);
std::vector<TextDocument> read_jsonl(const std::string& path);
std::string to_jsonl(const std::vector<TextDocument>& docs);

struct DatasetSplit {
  std::vector<TextDocument> train;
  std::vector<TextDocument> validation;
  std::vector<TextDocument> test;
};

/// Seeded shuffle, then train/validation/test by the given fractions (the
/// test split takes the remainder). Duplicate ids are rejected.
DatasetSplit split_dataset(const std::vector<TextDocument>& docs, std::uint64_t seed,
                           double train_fraction = 0.70, double validation_fraction = 0.15);

enum class Truncation { kKeepEarliest, kKeepLatest };

/// Drops sentences beyond `max_sentences` and words beyond `max_words`,
/// then any sentence left empty.
PatientDocument truncate(const PatientDocument& doc, std::size_t max_words,
                         std::size_t max_sentences, Truncation policy = Truncation::kKeepEarliest);

/// Padded id tensor [size, max_sentences, max_words] with masks.
struct Batch {
  std::size_t size = 0;
  std::size_t max_sentences = 0;
  std::size_t max_words = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> word_mask;      // [size, T, W]
  std::vector<std::uint8_t> sentence_mask;  // [size, T]
  std::vector<int> labels;
  std::vector<std::string> doc_ids;
  std::vector<std::size_t> doc_index;  // position in the input list

  std::int32_t id_at(std::size_t b, std::size_t t, std::size_t w) const {
    return ids[(b * max_sentences + t) * max_words + w];
  }
  bool word_real(std::size_t b, std::size_t t, std::size_t w) const {
    return word_mask[(b * max_sentences + t) * max_words + w] != 0;
  }
  bool sentence_real(std::size_t b, std::size_t t) const {
    return sentence_mask[b * max_sentences + t] != 0;
  }
};

/// Documents empty after truncation are skipped with a warning.
std::vector<Batch> pad_and_batch(const std::vector<PatientDocument>& docs, std::size_t max_words,
                                 std::size_t max_sentences, std::size_t batch_size,
                                 Truncation policy = Truncation::kKeepEarliest);

}  // namespace salab::data
