#pragma once

// Randomized finite-difference checks of the mappings and of whole model
// forward passes. Instances whose inputs sit within kMinMargin of a support
// boundary (or a relu kink) are redrawn.

#include <cstdint>
#include <string>

#include "salab/gradcheck.hpp"
#include "salab/models.hpp"

namespace salab::diag {

inline constexpr double kMinMargin = 1e-3;
inline constexpr int kMaxResamples = 50;

struct CheckOutcome {
  std::string name;
  nn::GradCheckReport report;
  int resamples = 0;
};

/// d<u, pi(z)>/dz from mapping_backward against central differences, for one
/// random z of length 2..8.
CheckOutcome check_mapping(const simplex::MappingKind& kind, std::uint64_t seed);

/// Small model used for whole-network checks.
models::ModelConfig tiny_model_config(models::Family family, const simplex::MappingKind& kind);

/// Two labeled documents (labels 1 and 0) of `sentences` sentences with 2..4
/// random in-vocabulary words each.
data::Batch random_micro_batch(const models::ModelConfig& cfg, std::size_t sentences,
                               CounterRng& rng);

/// Gradient of the batch loss with respect to every parameter.
CheckOutcome check_model(models::Family family, const simplex::MappingKind& kind,
                         std::uint64_t seed);

}  // namespace salab::diag
