#pragma once

// Scaled dot-product attention with a pluggable simplex mapping, multi-head
// self-attention, positional embeddings and a transformer encoder layer.
//
// Sequences are packed: a batch of variable-length sequences is one [N, d]
// matrix plus a list of row segments. Attention never crosses a segment
// boundary. A segment may also carry a key mask for padded positions; masked
// scores are filled with kMaskFill before the mapping is applied.

#include <string>
#include <vector>

#include "salab/autodiff.hpp"
#include "salab/simplex.hpp"

namespace salab::attn {

using nn::ParameterSet;
using nn::Tensor;
using nn::Var;
using simplex::MappingKind;

inline constexpr double kMaskFill = -1e9;

struct AttentionConfig {
  std::size_t model_dim = 128;
  std::size_t heads = 1;
  MappingKind mapping = MappingKind::softmax();
  double dropout_rate = 0.2;
  /// Post-norm (LN after the residual add) when true, pre-norm otherwise.
  bool post_norm = true;

  void validate() const;
};

/// Attention weights of one head over one sequence: `weights` is row-major
/// [size, size]; row = query position, column = key position.
struct AttentionRecord {
  std::size_t head = 0;
  std::size_t size = 0;
  std::vector<double> weights;
  std::vector<bool> key_mask;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;

  double at(std::size_t r, std::size_t c) const { return weights[r * size + c]; }
  std::size_t row_support(std::size_t r) const;
};

/// True when every row is nonnegative, sums to one within `tol`, and puts
/// exactly zero on masked columns.
bool record_is_valid(const AttentionRecord& record, double tol = 1e-6);

struct AttentionSegment {
  std::size_t start = 0;
  std::size_t length = 0;
  /// Empty means every position is real.
  std::vector<bool> key_mask;
};

/// pi(Q K^T / sqrt(d_head)) V per head on every segment. q, k, v are
/// [N, d]; d must be divisible by `heads`. Appends one record per
/// (segment, head) to `records` when non-null.
template <typename T>
Var<T> attention_core(Var<T> q, Var<T> k, Var<T> v, const std::vector<AttentionSegment>& segments,
                      std::size_t heads, const MappingKind& mapping,
                      std::vector<AttentionRecord>* records);

struct AttentionResult {
  Tensor<double> output;
  AttentionRecord record;
};

/// Single sequence, single head, no projections.
AttentionResult scaled_dot_attention(const Tensor<double>& q, const Tensor<double>& k,
                                     const Tensor<double>& v, const std::vector<bool>& key_mask,
                                     const MappingKind& mapping);

/// Registers W_q, W_k, W_v, W_o and biases under `prefix` (d_in -> d).
template <typename T>
void add_attention_params(ParameterSet<T>& params, const std::string& prefix, std::size_t d_in,
                          std::size_t d, CounterRng& rng);

/// Projects x [N, d_in] to queries/keys/values, attends, concatenates heads
/// and applies the output projection.
template <typename T>
Var<T> multi_head_attention(Var<T> x, const std::vector<AttentionSegment>& segments,
                            const AttentionConfig& cfg, ParameterSet<T>& params,
                            const std::string& prefix, std::vector<AttentionRecord>* records);

/// x [n, d] plus rows 0..n-1 of `table` [max_n, d]. n > max_n is a
/// capacity error.
template <typename T>
Var<T> add_positional_embeddings(Var<T> x, Var<T> table);

/// Same, with explicit per-row positions (packed sequences).
template <typename T>
Var<T> add_positional_embeddings(Var<T> x, Var<T> table, std::span<const std::size_t> positions);

/// Attention params plus two layer norms and an FFN of width 2d.
template <typename T>
void add_encoder_layer_params(ParameterSet<T>& params, const std::string& prefix, std::size_t d,
                              CounterRng& rng);

template <typename T>
Var<T> transformer_encoder_layer(Var<T> x, const std::vector<AttentionSegment>& segments,
                                 const AttentionConfig& cfg, ParameterSet<T>& params,
                                 const std::string& prefix, bool training, CounterRng& rng,
                                 std::vector<AttentionRecord>* records);

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight matrix [fan_in, fan_out].
template <typename T>
Tensor<T> init_weight(std::size_t fan_in, std::size_t fan_out, CounterRng& rng);

}  // namespace salab::attn
