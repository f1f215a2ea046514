#include "salab/attention.hpp"

#include <cmath>

namespace salab::attn {

using nn::Shape;
using nn::shape_string;
using nn::Tape;

void AttentionConfig::validate() const {
  require(model_dim >= 1 && heads >= 1, ErrorCode::kConfig,
          "attention: model_dim and heads must be positive");
  require(model_dim % heads == 0, ErrorCode::kConfig,
          "attention: model_dim " + std::to_string(model_dim) + " not divisible by " +
              std::to_string(heads) + " heads");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::kConfig,
          "attention: dropout rate must lie in [0, 1)");
}

std::size_t AttentionRecord::row_support(std::size_t r) const {
  std::size_t k = 0;
  for (std::size_t c = 0; c < size; ++c)
    if (at(r, c) > 0.0) ++k;
  return k;
}

bool record_is_valid(const AttentionRecord& record, double tol) {
  if (record.weights.size() != record.size * record.size) return false;
  for (std::size_t r = 0; r < record.size; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < record.size; ++c) {
      const double w = record.at(r, c);
      if (!(w >= 0.0)) return false;
      if (!record.key_mask.empty() && !record.key_mask[c] && w != 0.0) return false;
      total += w;
    }
    if (std::abs(total - 1.0) > tol) return false;
  }
  return true;
}

template <typename T>
Tensor<T> init_weight(std::size_t fan_in, std::size_t fan_out, CounterRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<T> w({fan_in, fan_out});
  for (T& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

namespace {

// Attention probabilities for one (segment, head), row-major [n, n].
struct HeadProbs {
  std::size_t start = 0;
  std::size_t n = 0;
  std::size_t head = 0;
  std::vector<double> p;
};

}  // namespace

template <typename T>
Var<T> attention_core(Var<T> q, Var<T> k, Var<T> v, const std::vector<AttentionSegment>& segments,
                      std::size_t heads, const MappingKind& mapping,
                      std::vector<AttentionRecord>* records) {
  require(q.shape().size() == 2 && q.shape() == k.shape() && q.shape() == v.shape(),
          ErrorCode::kShape,
          "attention: Q " + shape_string(q.shape()) + ", K " + shape_string(k.shape()) + ", V " +
              shape_string(v.shape()) + " must share one [n, d] shape");
  const std::size_t rows = q.rows();
  const std::size_t d = q.cols();
  require(heads >= 1 && d % heads == 0, ErrorCode::kConfig,
          "attention: dimension " + std::to_string(d) + " not divisible by " +
              std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto qv = q.value();
  auto kv = k.value();
  auto vv = v.value();
  std::vector<T> out(rows * d, T(0));
  std::vector<HeadProbs> saved;
  saved.reserve(segments.size() * heads);
  Tape<T>& tape = q.tape();

  std::vector<double> scores;
  for (const AttentionSegment& seg : segments) {
    const std::size_t n = seg.length;
    require(n >= 1 && seg.start + n <= rows, ErrorCode::kShape,
            "attention: segment [" + std::to_string(seg.start) + ", +" + std::to_string(n) +
                ") outside " + std::to_string(rows) + " rows");
    const bool masked = !seg.key_mask.empty();
    if (masked) {
      require(seg.key_mask.size() == n, ErrorCode::kShape, "attention: key mask length mismatch");
      bool any = false;
      for (bool b : seg.key_mask) any = any || b;
      require(any, ErrorCode::kEmpty, "attention: empty pool (every key is masked)");
    }
    for (std::size_t h = 0; h < heads; ++h) {
      HeadProbs hp{seg.start, n, h, std::vector<double>(n * n)};
      scores.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const T* qi = qv.data() + (seg.start + i) * d + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          if (masked && !seg.key_mask[j]) {
            scores[j] = kMaskFill;
            continue;
          }
          const T* kj = kv.data() + (seg.start + j) * d + h * dh;
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += static_cast<double>(qi[c]) * kj[c];
          scores[j] = acc * inv_sqrt;
        }
        simplex::MappingResult r = simplex::apply(mapping, scores);
        tape.note_margin(r.boundary_margin);
        if (masked) {
          for (std::size_t j = 0; j < n; ++j)
            if (!seg.key_mask[j]) r.p[j] = 0.0;
        }
        std::copy(r.p.begin(), r.p.end(), hp.p.begin() + static_cast<std::ptrdiff_t>(i * n));
        T* oi = out.data() + (seg.start + i) * d + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          const double pij = r.p[j];
          if (pij == 0.0) continue;
          const T* vj = vv.data() + (seg.start + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += static_cast<T>(pij * vj[c]);
        }
      }
      if (records) {
        AttentionRecord rec;
        rec.head = h;
        rec.size = n;
        rec.weights = hp.p;
        rec.key_mask = masked ? seg.key_mask : std::vector<bool>(n, true);
        records->push_back(std::move(rec));
      }
      if (tape.recording()) saved.push_back(std::move(hp));
    }
  }

  return tape.push(
      q.shape(), std::move(out), {q, k, v},
      [q, k, v, d, dh, inv_sqrt, mapping, saved = std::move(saved)](Var<T> self) {
        auto g = self.grad();
        auto qv = q.value();
        auto kv = k.value();
        auto vv = v.value();
        std::span<T> dq = q.needs_grad() ? q.grad() : std::span<T>();
        std::span<T> dk = k.needs_grad() ? k.grad() : std::span<T>();
        std::span<T> dv = v.needs_grad() ? v.grad() : std::span<T>();
        std::vector<double> dp;
        std::vector<double> ds;
        for (const HeadProbs& hp : saved) {
          const std::size_t n = hp.n;
          const std::size_t off = hp.head * dh;
          dp.assign(n, 0.0);
          ds.assign(n, 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            const T* gi = g.data() + (hp.start + i) * d + off;
            const double* pi = hp.p.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
              const T* vj = vv.data() + (hp.start + j) * d + off;
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += static_cast<double>(gi[c]) * vj[c];
              dp[j] = acc;
              if (!dv.empty() && pi[j] != 0.0) {
                T* dvj = dv.data() + (hp.start + j) * d + off;
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += static_cast<T>(pi[j] * gi[c]);
              }
            }
            simplex::mapping_backward_into({pi, n}, dp, mapping, ds);
            const T* qi = qv.data() + (hp.start + i) * d + off;
            for (std::size_t j = 0; j < n; ++j) {
              const double sij = ds[j] * inv_sqrt;
              if (sij == 0.0) continue;
              const T* kj = kv.data() + (hp.start + j) * d + off;
              if (!dq.empty()) {
                T* dqi = dq.data() + (hp.start + i) * d + off;
                for (std::size_t c = 0; c < dh; ++c) dqi[c] += static_cast<T>(sij * kj[c]);
              }
              if (!dk.empty()) {
                T* dkj = dk.data() + (hp.start + j) * d + off;
                for (std::size_t c = 0; c < dh; ++c) dkj[c] += static_cast<T>(sij * qi[c]);
              }
            }
          }
        }
      });
}

AttentionResult scaled_dot_attention(const Tensor<double>& q, const Tensor<double>& k,
                                     const Tensor<double>& v, const std::vector<bool>& key_mask,
                                     const MappingKind& mapping) {
  require(q.rank() == 2 && q.shape == k.shape && q.shape == v.shape, ErrorCode::kShape,
          "scaled_dot_attention: Q " + shape_string(q.shape) + ", K " + shape_string(k.shape) +
              ", V " + shape_string(v.shape) + " must share one [n, d] shape");
  Tape<double> tape(false);
  std::vector<AttentionSegment> segs{{0, q.rows(), key_mask}};
  std::vector<AttentionRecord> records;
  Var<double> out = attention_core(tape.constant(q), tape.constant(k), tape.constant(v), segs, 1,
                                   mapping, &records);
  return {out.value_tensor(), std::move(records.front())};
}

template <typename T>
void add_attention_params(ParameterSet<T>& params, const std::string& prefix, std::size_t d_in,
                          std::size_t d, CounterRng& rng) {
  for (const char* name : {"wq", "wk", "wv"}) {
    params.add(prefix + "." + name, init_weight<T>(d_in, d, rng));
    params.add(prefix + ".b" + std::string(name + 1), Tensor<T>({d}));
  }
  params.add(prefix + ".wo", init_weight<T>(d, d, rng));
  params.add(prefix + ".bo", Tensor<T>({d}));
}

template <typename T>
Var<T> multi_head_attention(Var<T> x, const std::vector<AttentionSegment>& segments,
                            const AttentionConfig& cfg, ParameterSet<T>& params,
                            const std::string& prefix, std::vector<AttentionRecord>* records) {
  cfg.validate();
  Tape<T>& tape = x.tape();
  auto p = [&](const char* name) { return tape.param(params.get(prefix + "." + name)); };
  Var<T> q = nn::linear(x, p("wq"), p("bq"));
  Var<T> k = nn::linear(x, p("wk"), p("bk"));
  Var<T> v = nn::linear(x, p("wv"), p("bv"));
  require(q.cols() == cfg.model_dim, ErrorCode::kShape,
          "multi_head_attention: projections produce width " + std::to_string(q.cols()) +
              ", config says " + std::to_string(cfg.model_dim));
  Var<T> heads = attention_core(q, k, v, segments, cfg.heads, cfg.mapping, records);
  return nn::linear(heads, p("wo"), p("bo"));
}

template <typename T>
Var<T> add_positional_embeddings(Var<T> x, Var<T> table) {
  std::vector<std::size_t> positions(x.rows());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return nn::add_indexed_rows(x, table, positions);
}

template <typename T>
Var<T> add_positional_embeddings(Var<T> x, Var<T> table, std::span<const std::size_t> positions) {
  return nn::add_indexed_rows(x, table, positions);
}

template <typename T>
void add_encoder_layer_params(ParameterSet<T>& params, const std::string& prefix, std::size_t d,
                              CounterRng& rng) {
  add_attention_params(params, prefix + ".attn", d, d, rng);
  params.add(prefix + ".ln1.gain", Tensor<T>({d}, T(1)));
  params.add(prefix + ".ln1.bias", Tensor<T>({d}));
  params.add(prefix + ".ffn.w1", init_weight<T>(d, 2 * d, rng));
  params.add(prefix + ".ffn.b1", Tensor<T>({2 * d}));
  params.add(prefix + ".ffn.w2", init_weight<T>(2 * d, d, rng));
  params.add(prefix + ".ffn.b2", Tensor<T>({d}));
  params.add(prefix + ".ln2.gain", Tensor<T>({d}, T(1)));
  params.add(prefix + ".ln2.bias", Tensor<T>({d}));
}

template <typename T>
Var<T> transformer_encoder_layer(Var<T> x, const std::vector<AttentionSegment>& segments,
                                 const AttentionConfig& cfg, ParameterSet<T>& params,
                                 const std::string& prefix, bool training, CounterRng& rng,
                                 std::vector<AttentionRecord>* records) {
  cfg.validate();
  Tape<T>& tape = x.tape();
  auto p = [&](const std::string& name) { return tape.param(params.get(prefix + "." + name)); };
  auto ln = [&](Var<T> in, const char* which) {
    return nn::layer_norm(in, p(std::string(which) + ".gain"), p(std::string(which) + ".bias"));
  };
  auto ffn = [&](Var<T> in) {
    Var<T> h = nn::relu(nn::linear(in, p("ffn.w1"), p("ffn.b1")));
    return nn::linear(h, p("ffn.w2"), p("ffn.b2"));
  };
  auto attend = [&](Var<T> in) {
    return nn::dropout(multi_head_attention(in, segments, cfg, params, prefix + ".attn", records),
                       cfg.dropout_rate, training, rng);
  };
  if (cfg.post_norm) {
    Var<T> y = ln(nn::add(x, attend(x)), "ln1");
    return ln(nn::add(y, nn::dropout(ffn(y), cfg.dropout_rate, training, rng)), "ln2");
  }
  Var<T> y = nn::add(x, attend(ln(x, "ln1")));
  return nn::add(y, nn::dropout(ffn(ln(y, "ln2")), cfg.dropout_rate, training, rng));
}

#define SALAB_INSTANTIATE(T)                                                                   \
  template Tensor<T> init_weight<T>(std::size_t, std::size_t, CounterRng&);                    \
  template Var<T> attention_core(Var<T>, Var<T>, Var<T>, const std::vector<AttentionSegment>&, \
                                 std::size_t, const MappingKind&, std::vector<AttentionRecord>*); \
  template void add_attention_params(ParameterSet<T>&, const std::string&, std::size_t,        \
                                     std::size_t, CounterRng&);                                \
  template Var<T> multi_head_attention(Var<T>, const std::vector<AttentionSegment>&,           \
                                       const AttentionConfig&, ParameterSet<T>&,               \
                                       const std::string&, std::vector<AttentionRecord>*);     \
  template Var<T> add_positional_embeddings(Var<T>, Var<T>);                                   \
  template Var<T> add_positional_embeddings(Var<T>, Var<T>, std::span<const std::size_t>);     \
  template void add_encoder_layer_params(ParameterSet<T>&, const std::string&, std::size_t,    \
                                         CounterRng&);                                         \
  template Var<T> transformer_encoder_layer(Var<T>, const std::vector<AttentionSegment>&,      \
                                            const AttentionConfig&, ParameterSet<T>&,          \
                                            const std::string&, bool, CounterRng&,             \
                                            std::vector<AttentionRecord>*);

SALAB_INSTANTIATE(float)
SALAB_INSTANTIATE(double)

#undef SALAB_INSTANTIATE

}  // namespace salab::attn
