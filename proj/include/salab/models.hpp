#pragma once

// Two document classifiers parameterized by the attention mapping.
//
//   Att (local): word embeddings -> Q/K/V projections -> one head of
//   self-attention inside each sentence -> flat mean over every real token of
//   the document -> one logit.
//
//   Tr (hierarchical): word embeddings + word positions -> projection ->
//   word-level encoder layers per sentence -> mean per sentence -> sentence
//   positions -> sentence-level encoder layers -> mean over sentences -> one
//   logit.
//
// Batches are packed before any compute: padded cells of a data::Batch never
// enter a matrix product, so padding cannot change a logit.

#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "salab/attention.hpp"
#include "salab/data.hpp"
#include "salab/kv.hpp"

namespace salab::models {

using attn::AttentionRecord;
using nn::ParameterSet;
using nn::Tape;
using nn::Var;
using simplex::MappingKind;

enum class Family { kLocal, kHier };

const char* family_name(Family f);
Family parse_family(const std::string& s);

struct ModelConfig {
  Family family = Family::kLocal;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 100;
  std::size_t hidden = 128;
  MappingKind mapping = MappingKind::softmax();
  double dropout = 0.2;
  /// Att only: one projection feeds queries, keys and values.
  bool shared_projection = false;
  std::size_t word_layers = 1;
  std::size_t sentence_layers = 1;
  std::size_t word_heads = 1;
  std::size_t sentence_heads = 1;
  /// Truncation caps; for Tr also the sizes of the positional tables.
  std::size_t max_words = 20;
  std::size_t max_sentences = 40;
  /// Standard deviation of the initial embedding and position rows.
  double embed_init = 1.0;

  void validate() const;
  KeyValues to_key_values() const;
  /// Unknown keys are a config error.
  static ModelConfig from_key_values(const KeyValues& kv);
};

template <typename T>
ParameterSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

inline constexpr std::size_t kSentenceLevel = std::numeric_limits<std::size_t>::max();

/// An attention map tagged with its batch position. `sentence` is
/// kSentenceLevel for the sentence-over-sentence map of Tr.
struct LocatedRecord {
  std::size_t doc = 0;
  std::size_t sentence = 0;
  std::size_t layer = 0;
  AttentionRecord record;
};

template <typename T>
struct ForwardResult {
  Var<T> logits;  // [batch, 1]
  std::vector<LocatedRecord> records;
};

template <typename T>
ForwardResult<T> local_forward(Tape<T>& tape, const data::Batch& batch, const ModelConfig& cfg,
                               ParameterSet<T>& params, bool training, CounterRng& rng,
                               bool keep_records = false);

template <typename T>
ForwardResult<T> hier_forward(Tape<T>& tape, const data::Batch& batch, const ModelConfig& cfg,
                              ParameterSet<T>& params, bool training, CounterRng& rng,
                              bool keep_records = false);

/// Dispatches on cfg.family.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const data::Batch& batch, const ModelConfig& cfg,
                         ParameterSet<T>& params, bool training, CounterRng& rng,
                         bool keep_records = false);

double predict_proba(double logit);

/// A trained or freshly initialized classifier.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, ParameterSet<float> params);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<float>& params() { return params_; }
  const ParameterSet<float>& params() const { return params_; }

  /// Swaps the attention mapping; parameter shapes do not depend on it.
  void set_mapping(const MappingKind& m) { cfg_.mapping = m; }

  /// Inference logits, one per document of the batch.
  std::vector<double> logits(const data::Batch& batch);
  /// Logits for documents in input order; documents empty after truncation
  /// get NaN.
  std::vector<double> logits(const std::vector<data::PatientDocument>& docs,
                             std::size_t batch_size = 64);

  /// Writes `path` (parameters) and `path + ".config"` (key=value).
  void save(const std::string& path) const;
  /// Reads both files. `mapping`, when given, overrides the stored one.
  static Model load(const std::string& path, std::optional<MappingKind> mapping = std::nullopt);

 private:
  ModelConfig cfg_;
  ParameterSet<float> params_;
};

/// Attention maps of one document with rows and columns labeled by surface
/// tokens. With a filter, only word-level maps of sentences containing a
/// filter token are returned; filter tokens missing from the vocabulary
/// produce a warning.
std::vector<LocatedRecord> extract_attention_maps(
    Model& model, const data::TextDocument& doc, const data::Vocabulary& vocab,
    const std::optional<std::set<std::string>>& filter = std::nullopt);

}  // namespace salab::models
