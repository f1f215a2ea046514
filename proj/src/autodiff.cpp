#include "salab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "linalg.hpp"

namespace salab::nn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_with_logits_value(double logit, int label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

// ---------------------------------------------------------------------------
// Var

template <typename T>
const Shape& Var<T>::shape() const {
  return tape_->shape(id_);
}

template <typename T>
std::span<const T> Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::needs_grad() const {
  return tape_->needs_grad(id_);
}

template <typename T>
std::span<T> Var<T>::grad() const {
  return tape_->grad(id_);
}

template <typename T>
Tensor<T> Var<T>::value_tensor() const {
  auto v = value();
  return Tensor<T>(shape(), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
Tensor<T> Var<T>::grad_tensor() const {
  auto g = grad();
  return Tensor<T>(shape(), std::vector<T>(g.begin(), g.end()));
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.shape = std::move(value.shape);
  n.value = std::move(value.data);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value, bool requires_grad) {
  Var<T> v = constant(std::move(value));
  nodes_.back().needs_grad = requires_grad && record_;
  return v;
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  Node n;
  n.shape = p.value.shape;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::push(Shape shape, std::vector<T> value, const std::vector<Var<T>>& inputs,
                     BackwardFn backward) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  if (record_) {
    for (const Var<T>& in : inputs) n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
std::span<const T> Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.param) return n.param->value.data;
  return n.value;
}

template <typename T>
std::span<T> Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad.data;
  if (n.grad.empty()) n.grad.assign(numel(n.shape), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  require(record_, ErrorCode::kInvalidArgument, "backward on a non-recording tape");
  require(loss.size() == 1, ErrorCode::kShape,
          "backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  grad(loss.id())[0] += T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward) continue;
    if (n.grad.empty()) continue;  // nothing flowed into this node
    n.backward(Var<T>(this, i));
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

template <typename T>
Var<T> linear_impl(Var<T> x, Var<T> weight, const Var<T>* bias) {
  Tape<T>& tape = x.tape();
  const Shape& ws = weight.shape();
  require(ws.size() == 2 && !x.shape().empty() && x.shape().back() == ws[0], ErrorCode::kShape,
          "linear: input " + shape_string(x.shape()) + " incompatible with weight " +
              shape_string(ws));
  const std::size_t in = ws[0];
  const std::size_t out = ws[1];
  if (bias) {
    require(bias->size() == out, ErrorCode::kShape,
            "linear: bias " + shape_string(bias->shape()) + " incompatible with weight " +
                shape_string(ws));
  }
  const std::size_t rows = x.size() / in;
  std::vector<T> y(rows * out);
  detail::gemm(false, false, rows, out, in, x.value().data(), weight.value().data(), y.data(),
               false);
  if (bias) {
    auto b = bias->value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < out; ++c) y[r * out + c] += b[c];
  }
  Shape ys = x.shape();
  ys.back() = out;
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  const Var<T> b = bias ? *bias : Var<T>();
  return tape.push(std::move(ys), std::move(y), inputs,
                   [x, weight, b, has_bias, rows, in, out](Var<T> self) {
                     const T* g = self.grad().data();
                     if (x.needs_grad())
                       detail::gemm(false, true, rows, in, out, g, weight.value().data(),
                                    x.grad().data(), true);
                     if (weight.needs_grad())
                       detail::gemm(true, false, in, out, rows, x.value().data(), g,
                                    weight.grad().data(), true);
                     if (has_bias && b.needs_grad()) {
                       auto db = b.grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < out; ++c) db[c] += g[r * out + c];
                     }
                   });
}

}  // namespace

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return linear_impl(x, weight, &bias);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight) {
  return linear_impl<T>(x, weight, nullptr);
}

template <typename T>
Var<T> embedding_lookup(std::span<const std::int32_t> ids, Var<T> table) {
  const Shape& ts = table.shape();
  require(ts.size() == 2, ErrorCode::kShape,
          "embedding_lookup: table must be rank 2, got " + shape_string(ts));
  require(!ids.empty(), ErrorCode::kShape, "embedding_lookup: no ids");
  const std::size_t vocab = ts[0];
  const std::size_t d = ts[1];
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  std::vector<T> out(ids.size() * d, T(0));
  auto tv = table.value();
  for (std::size_t i = 0; i < saved.size(); ++i) {
    const std::int32_t id = saved[i];
    require(id >= 0 && static_cast<std::size_t>(id) < vocab, ErrorCode::kOutOfRange,
            "embedding_lookup: id " + std::to_string(id) + " outside vocabulary of size " +
                std::to_string(vocab));
    if (id == 0) continue;
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
  }
  const std::size_t n = saved.size();
  return table.tape().push({n, d}, std::move(out), {table},
                           [table, saved = std::move(saved), d](Var<T> self) {
                             auto g = self.grad();
                             auto dt = table.grad();
                             for (std::size_t i = 0; i < saved.size(); ++i) {
                               if (saved[i] == 0) continue;
                               T* row = dt.data() + static_cast<std::size_t>(saved[i]) * d;
                               for (std::size_t c = 0; c < d; ++c) row[c] += g[i * d + c];
                             }
                           });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), ErrorCode::kShape,
          "add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
              " differ");
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().push(a.shape(), std::move(out), {a, b}, [a, b](Var<T> self) {
    auto g = self.grad();
    if (a.needs_grad()) {
      auto da = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (b.needs_grad()) {
      auto db = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    }
  });
}

template <typename T>
Var<T> add_indexed_rows(Var<T> x, Var<T> table, std::span<const std::size_t> positions) {
  require(table.shape().size() == 2 && table.cols() == x.cols(), ErrorCode::kShape,
          "add_indexed_rows: input " + shape_string(x.shape()) + " incompatible with table " +
              shape_string(table.shape()));
  require(positions.size() == x.rows(), ErrorCode::kShape,
          "add_indexed_rows: " + std::to_string(positions.size()) + " positions for " +
              std::to_string(x.rows()) + " rows");
  const std::size_t d = x.cols();
  const std::size_t capacity = table.rows();
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  for (std::size_t p : pos) {
    require(p < capacity, ErrorCode::kCapacity,
            "position " + std::to_string(p) + " exceeds positional table capacity " +
                std::to_string(capacity));
  }
  auto xv = x.value();
  auto tv = table.value();
  std::vector<T> out(xv.begin(), xv.end());
  for (std::size_t r = 0; r < pos.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += tv[pos[r] * d + c];
  return x.tape().push(x.shape(), std::move(out), {x, table},
                       [x, table, pos = std::move(pos), d](Var<T> self) {
                         auto g = self.grad();
                         if (x.needs_grad()) {
                           auto dx = x.grad();
                           for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                         }
                         if (table.needs_grad()) {
                           auto dt = table.grad();
                           for (std::size_t r = 0; r < pos.size(); ++r)
                             for (std::size_t c = 0; c < d; ++c) dt[pos[r] * d + c] += g[r * d + c];
                         }
                       });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return x.tape().push(x.shape(), std::move(out), {x}, [x, factor](Var<T> self) {
    auto g = self.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] > T(0) ? xv[i] : T(0);
    margin = std::min(margin, static_cast<double>(std::abs(xv[i])));
  }
  x.tape().note_margin(margin);
  return x.tape().push(x.shape(), std::move(out), {x}, [x](Var<T> self) {
    auto g = self.grad();
    auto xv = x.value();
    auto dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) dx[i] += g[i];
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, CounterRng& rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::kInvalidArgument,
          "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto xv = x.value();
  std::vector<T> mask(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : T(0);
    out[i] = xv[i] * mask[i];
  }
  return x.tape().push(x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](Var<T> self) {
    auto g = self.grad();
    auto dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps) {
  const std::size_t d = x.cols();
  require(gain.size() == d && bias.size() == d, ErrorCode::kShape,
          "layer_norm: input " + shape_string(x.shape()) + " with gain " +
              shape_string(gain.shape()) + " and bias " + shape_string(bias.shape()));
  const std::size_t rows = x.rows();
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<T>(inv);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = static_cast<T>((row[c] - mean) * inv);
      xhat[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape().push(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Var<T> self) {
        auto g = self.grad();
        auto gv = gain.value();
        if (gain.needs_grad() || bias.needs_grad()) {
          auto dg = gain.grad();
          auto db = bias.grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) {
              dg[c] += g[r * d + c] * xhat[r * d + c];
              db[c] += g[r * d + c];
            }
        }
        if (!x.needs_grad()) return;
        auto dx = x.grad();
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0;
          double mean_dh_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dh[c] = static_cast<double>(g[r * d + c]) * gv[c];
            mean_dh += dh[c];
            mean_dh_h += dh[c] * xhat[r * d + c];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c)
            dx[r * d + c] +=
                static_cast<T>(rstd[r] * (dh[c] - mean_dh - xhat[r * d + c] * mean_dh_h));
        }
      });
}

template <typename T>
Var<T> segment_mean(Var<T> x, std::span<const Segment> segments) {
  const std::size_t d = x.cols();
  const std::size_t n = x.rows();
  require(!segments.empty(), ErrorCode::kEmpty, "segment_mean: no segments");
  std::vector<Segment> segs(segments.begin(), segments.end());
  auto xv = x.value();
  std::vector<T> out(segs.size() * d, T(0));
  for (std::size_t s = 0; s < segs.size(); ++s) {
    require(segs[s].length >= 1, ErrorCode::kEmpty, "segment_mean: empty pool");
    require(segs[s].start + segs[s].length <= n, ErrorCode::kShape,
            "segment_mean: segment exceeds " + std::to_string(n) + " rows");
    const double inv = 1.0 / static_cast<double>(segs[s].length);
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t r = segs[s].start; r < segs[s].start + segs[s].length; ++r)
        acc += xv[r * d + c];
      out[s * d + c] = static_cast<T>(acc * inv);
    }
  }
  const std::size_t n_segs = segs.size();
  return x.tape().push({n_segs, d}, std::move(out), {x},
                       [x, segs = std::move(segs), d](Var<T> self) {
                         auto g = self.grad();
                         auto dx = x.grad();
                         for (std::size_t s = 0; s < segs.size(); ++s) {
                           const T inv = static_cast<T>(1.0 / static_cast<double>(segs[s].length));
                           for (std::size_t r = segs[s].start; r < segs[s].start + segs[s].length;
                                ++r)
                             for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += g[s * d + c] * inv;
                         }
                       });
}

template <typename T>
Var<T> masked_mean_pool(Var<T> x, const std::vector<bool>& mask) {
  require(mask.size() == x.rows(), ErrorCode::kShape,
          "masked_mean_pool: mask of length " + std::to_string(mask.size()) + " for input " +
              shape_string(x.shape()));
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) rows.push_back(i);
  require(!rows.empty(), ErrorCode::kEmpty, "masked_mean_pool: empty pool (all rows masked)");
  const std::size_t d = x.cols();
  auto xv = x.value();
  std::vector<T> out(d, T(0));
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t c = 0; c < d; ++c) {
    double acc = 0.0;
    for (std::size_t r : rows) acc += xv[r * d + c];
    out[c] = static_cast<T>(acc * inv);
  }
  return x.tape().push({d}, std::move(out), {x}, [x, rows = std::move(rows), d](Var<T> self) {
    auto g = self.grad();
    auto dx = x.grad();
    const T inv = static_cast<T>(1.0 / static_cast<double>(rows.size()));
    for (std::size_t r : rows)
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += g[c] * inv;
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  double acc = 0.0;
  for (T v : x.value()) acc += v;
  return x.tape().push({1}, {static_cast<T>(acc)}, {x}, [x](Var<T> self) {
    const T g = self.grad()[0];
    for (T& v : x.grad()) v += g;
  });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, std::span<const int> labels) {
  require(logits.size() == labels.size() && !labels.empty(), ErrorCode::kShape,
          "bce_with_logits: " + std::to_string(logits.size()) + " logits for " +
              std::to_string(labels.size()) + " labels");
  std::vector<int> y(labels.begin(), labels.end());
  for (int v : y)
    require(v == 0 || v == 1, ErrorCode::kInvalidArgument, "bce_with_logits: label must be 0/1");
  auto s = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += bce_with_logits_value(s[i], y[i]);
  const double inv = 1.0 / static_cast<double>(y.size());
  return logits.tape().push({1}, {static_cast<T>(total * inv)}, {logits},
                            [logits, y = std::move(y), inv](Var<T> self) {
                              const double g = self.grad()[0];
                              auto s = logits.value();
                              auto ds = logits.grad();
                              for (std::size_t i = 0; i < y.size(); ++i)
                                ds[i] += static_cast<T>(g * inv * (stable_sigmoid(s[i]) - y[i]));
                            });
}

#define SALAB_INSTANTIATE(T)                                                              \
  template class Var<T>;                                                                  \
  template class Tape<T>;                                                                 \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                         \
  template Var<T> linear(Var<T>, Var<T>);                                                 \
  template Var<T> embedding_lookup(std::span<const std::int32_t>, Var<T>);                \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> add_indexed_rows(Var<T>, Var<T>, std::span<const std::size_t>);         \
  template Var<T> scale(Var<T>, T);                                                       \
  template Var<T> relu(Var<T>);                                                           \
  template Var<T> dropout(Var<T>, double, bool, CounterRng&);                             \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                             \
  template Var<T> segment_mean(Var<T>, std::span<const Segment>);                         \
  template Var<T> masked_mean_pool(Var<T>, const std::vector<bool>&);                     \
  template Var<T> sum(Var<T>);                                                            \
  template Var<T> bce_with_logits(Var<T>, std::span<const int>);

SALAB_INSTANTIATE(float)
SALAB_INSTANTIATE(double)

#undef SALAB_INSTANTIATE

}  // namespace salab::nn
