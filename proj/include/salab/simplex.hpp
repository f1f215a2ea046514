#pragma once

// Mappings from a real score vector onto the probability simplex: softmax,
// sparsemax, exact 1.5-entmax and bisection alpha-entmax, with their
// vector-Jacobian products. All math is done in double precision.

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace salab::simplex {

/// Which simplex mapping to apply. `alpha` is meaningful for kEntmaxAlpha
/// only; the other kinds report their fixed alpha via `effective_alpha()`.
class MappingKind {
 public:
  enum class Tag { kSoftmax, kSparsemax, kEntmax15, kEntmaxAlpha };

  static MappingKind softmax() { return MappingKind(Tag::kSoftmax, 1.0); }
  static MappingKind sparsemax() { return MappingKind(Tag::kSparsemax, 2.0); }
  static MappingKind entmax15() { return MappingKind(Tag::kEntmax15, 1.5); }
  /// Requires alpha in (1, 4].
  static MappingKind entmax(double alpha);

  /// Accepts "softmax", "sparsemax", "entmax15", "entmax" (alpha 1.5) and
  /// "entmax:<alpha>".
  static MappingKind parse(const std::string& text);

  Tag tag() const { return tag_; }
  double effective_alpha() const { return alpha_; }
  bool is_sparse() const { return tag_ != Tag::kSoftmax; }
  std::string to_string() const;

  friend bool operator==(const MappingKind&, const MappingKind&) = default;

 private:
  MappingKind(Tag tag, double alpha) : tag_(tag), alpha_(alpha) {}
  Tag tag_;
  double alpha_;
};

struct SupportInfo {
  double threshold = 0.0;
  std::size_t support_size = 0;
  std::vector<bool> support_mask;
};

struct MappingResult {
  std::vector<double> p;
  SupportInfo support;
  /// Smallest distance between a (scaled) input and the threshold. Inputs
  /// closer than this to the boundary can flip support membership under a
  /// perturbation. Infinite for softmax, which has no boundary.
  double boundary_margin = std::numeric_limits<double>::infinity();
};

/// Sparse outputs below this are snapped to exact zero.
inline constexpr double kZeroFloor = 1e-12;
inline constexpr int kDefaultBisectIterations = 50;

std::vector<double> softmax(std::span<const double> z);
MappingResult sparsemax(std::span<const double> z);
MappingResult entmax15(std::span<const double> z);
std::vector<double> entmax_bisect(std::span<const double> z, double alpha,
                                  int max_iter = kDefaultBisectIterations);
MappingResult entmax_bisect_full(std::span<const double> z, double alpha,
                                 int max_iter = kDefaultBisectIterations);

/// Dispatches on `kind`. Softmax reports a full support with the
/// log-partition as its threshold.
MappingResult apply(const MappingKind& kind, std::span<const double> z);

/// Vector-Jacobian product of the mapping at output `p`:
///   dz = g*u - (sum(g*u) / sum(g)) * g,  g_i = p_i^(2 - alpha) on the support.
std::vector<double> mapping_backward(std::span<const double> p,
                                     std::span<const double> upstream,
                                     const MappingKind& kind);

/// Same as above, writing into `dz` (which may not alias the inputs).
void mapping_backward_into(std::span<const double> p,
                           std::span<const double> upstream,
                           const MappingKind& kind, std::span<double> dz);

}  // namespace salab::simplex
