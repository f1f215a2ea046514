#include "salab/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "salab/error.hpp"

namespace salab::diag {

using models::Family;
using simplex::MappingKind;

CheckOutcome check_mapping(const MappingKind& kind, std::uint64_t seed) {
  CheckOutcome out;
  out.name = "mapping " + kind.to_string();
  const CounterRng root(seed);
  for (int attempt = 0;; ++attempt) {
    CounterRng rng = root.fork(static_cast<std::uint64_t>(attempt));
    const std::size_t n = 2 + rng.below(7);
    std::vector<double> z(n), u(n);
    for (auto& v : z) v = rng.normal(0.0, 1.5);
    for (auto& v : u) v = rng.normal();
    const auto res = simplex::apply(kind, z);
    if (res.boundary_margin < kMinMargin && attempt < kMaxResamples) {
      ++out.resamples;
      continue;
    }
    const auto analytic = simplex::mapping_backward(res.p, u, kind);
    auto objective = [&](const std::vector<double>& x) {
      const auto p = simplex::apply(kind, x).p;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += u[i] * p[i];
      return s;
    };
    nn::GradCheckReport& rep = out.report;
    rep.tolerance = nn::kGradCheckTol;
    rep.min_margin = res.boundary_margin;
    for (std::size_t i = 0; i < n; ++i) {
      auto zp = z, zm = z;
      zp[i] += nn::kGradCheckEps;
      zm[i] -= nn::kGradCheckEps;
      const double numeric = (objective(zp) - objective(zm)) / (2 * nn::kGradCheckEps);
      rep.max_rel_error = std::max(rep.max_rel_error, nn::relative_error(analytic[i], numeric));
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(analytic[i] - numeric));
      ++rep.checked;
    }
    rep.passed = rep.max_rel_error <= rep.tolerance;
    return out;
  }
}

models::ModelConfig tiny_model_config(Family family, const MappingKind& kind) {
  models::ModelConfig c;
  c.family = family;
  c.vocab_size = 10;
  c.embed_dim = 4;
  c.hidden = 4;
  c.mapping = kind;
  c.dropout = 0.0;
  c.word_heads = 2;
  c.sentence_heads = 1;
  c.max_words = 5;
  c.max_sentences = 4;
  c.embed_init = 1.0;
  return c;
}

data::Batch random_micro_batch(const models::ModelConfig& cfg, std::size_t sentences,
                               CounterRng& rng) {
  std::vector<data::PatientDocument> docs;
  for (int d = 0; d < 2; ++d) {
    data::PatientDocument doc{"m" + std::to_string(d), 1 - d, {}};
    for (std::size_t s = 0; s < sentences; ++s) {
      std::vector<std::int32_t> ids(2 + rng.below(3));
      for (auto& id : ids) id = static_cast<std::int32_t>(2 + rng.below(cfg.vocab_size - 2));
      doc.sentences.push_back(std::move(ids));
    }
    docs.push_back(std::move(doc));
  }
  return data::pad_and_batch(docs, cfg.max_words, cfg.max_sentences, 2).at(0);
}

CheckOutcome check_model(Family family, const MappingKind& kind, std::uint64_t seed) {
  CheckOutcome out;
  out.name = std::string(models::family_name(family)) + " " + kind.to_string();
  const models::ModelConfig cfg = tiny_model_config(family, kind);
  const CounterRng root(seed);
  for (int attempt = 0;; ++attempt) {
    CounterRng rng = root.fork(static_cast<std::uint64_t>(attempt));
    auto params = models::init_params<double>(cfg, rng.next_u64());
    // Nonzero biases and norm parameters so every path carries gradient.
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.value.rank() == 1)
        for (auto& v : p.value.data) v += rng.normal(0.0, 0.3);
    }
    const data::Batch batch = random_micro_batch(cfg, family == Family::kHier ? 3 : 2, rng);
    auto f = [&](nn::Tape<double>& tape) {
      CounterRng unused(0);
      auto r = models::forward(tape, batch, cfg, params, true, unused);
      return nn::bce_with_logits(r.logits, std::span<const int>(batch.labels));
    };
    // Margin of the unperturbed pass decides whether to redraw.
    {
      nn::Tape<double> probe(false);
      f(probe);
      if (probe.min_margin() < kMinMargin && attempt < kMaxResamples) {
        ++out.resamples;
        continue;
      }
    }
    out.report = nn::grad_check_params(f, params);
    return out;
  }
}

}  // namespace salab::diag
