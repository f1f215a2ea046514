#include "salab/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "salab/error.hpp"

namespace salab::simplex {

namespace {

void require_nonempty(std::span<const double> z, const char* who) {
  require(!z.empty(), ErrorCode::kInvalidArgument,
          std::string(who) + ": empty input");
}

double max_of(std::span<const double> z) {
  return *std::max_element(z.begin(), z.end());
}

// Sorted copy, descending. Every reduction below walks this order so that
// permuting the input cannot change any rounding.
std::vector<double> sorted_desc(std::span<const double> z) {
  std::vector<double> s(z.begin(), z.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

// Finish a sparse mapping: snap tiny entries, build the mask, measure the
// distance of every scaled input to the threshold.
void finalize_sparse(MappingResult& r, std::span<const double> scaled) {
  r.support.support_mask.assign(r.p.size(), false);
  r.support.support_size = 0;
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < r.p.size(); ++i) {
    if (r.p[i] < kZeroFloor) r.p[i] = 0.0;
    if (r.p[i] > 0.0) {
      r.support.support_mask[i] = true;
      ++r.support.support_size;
    }
    margin = std::min(margin, std::abs(scaled[i] - r.support.threshold));
  }
  r.boundary_margin = margin;
}

}  // namespace

MappingKind MappingKind::entmax(double alpha) {
  require(std::isfinite(alpha) && alpha > 1.0 && alpha <= 4.0,
          ErrorCode::kInvalidArgument, "entmax alpha must lie in (1, 4]");
  return MappingKind(Tag::kEntmaxAlpha, alpha);
}

MappingKind MappingKind::parse(const std::string& text) {
  if (text == "softmax") return softmax();
  if (text == "sparsemax") return sparsemax();
  if (text == "entmax15" || text == "entmax") return entmax15();
  const std::string prefix = "entmax:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string rest = text.substr(prefix.size());
    std::size_t used = 0;
    double alpha = 0.0;
    try {
      alpha = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == rest.size() && !rest.empty(), ErrorCode::kConfig,
            "bad entmax alpha in mapping '" + text + "'");
    return entmax(alpha);
  }
  fail(ErrorCode::kConfig, "unknown mapping '" + text + "'");
}

std::string MappingKind::to_string() const {
  switch (tag_) {
    case Tag::kSoftmax: return "softmax";
    case Tag::kSparsemax: return "sparsemax";
    case Tag::kEntmax15: return "entmax15";
    case Tag::kEntmaxAlpha: {
      std::ostringstream os;
      os.precision(17);
      os << "entmax:" << alpha_;
      return os.str();
    }
  }
  return "?";
}

std::vector<double> softmax(std::span<const double> z) {
  require_nonempty(z, "softmax");
  const double m = max_of(z);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - m);
  const std::vector<double> order = sorted_desc(p);
  const double total = std::accumulate(order.begin(), order.end(), 0.0);
  for (double& v : p) v /= total;
  return p;
}

MappingResult sparsemax(std::span<const double> z) {
  require_nonempty(z, "sparsemax");
  const std::size_t n = z.size();
  const double m = max_of(z);
  std::vector<double> shifted(n);
  for (std::size_t i = 0; i < n; ++i) shifted[i] = z[i] - m;
  const std::vector<double> s = sorted_desc(shifted);

  // Largest k with 1 + k * s_k > sum_{j<=k} s_j; the condition holds on a
  // prefix, so stop at the first failure.
  double cumsum = 0.0;
  double support_sum = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cumsum += s[i];
    const double kk = static_cast<double>(i + 1);
    if (1.0 + kk * s[i] > cumsum) {
      k = i + 1;
      support_sum = cumsum;
    } else {
      break;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(k);

  MappingResult r;
  r.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.p[i] = std::max(shifted[i] - tau, 0.0);
  r.support.threshold = tau;
  finalize_sparse(r, shifted);
  r.support.threshold = tau + m;
  return r;
}

MappingResult entmax15(std::span<const double> z) {
  require_nonempty(z, "entmax15");
  const std::size_t n = z.size();
  const double m = max_of(z) / 2.0;
  std::vector<double> shifted(n);
  for (std::size_t i = 0; i < n; ++i) shifted[i] = z[i] / 2.0 - m;
  const std::vector<double> s = sorted_desc(shifted);

  double sum = 0.0;
  double sum_sq = 0.0;
  double tau = s[0] - 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += s[i];
    sum_sq += s[i] * s[i];
    const double k = static_cast<double>(i + 1);
    const double mean = sum / k;
    const double mean_sq = sum_sq / k;
    const double ss = k * (mean_sq - mean * mean);
    const double delta = (1.0 - ss) / k;
    if (!(delta >= 0.0)) break;
    const double candidate = mean - std::sqrt(delta);
    if (candidate <= s[i]) {
      tau = candidate;
    } else {
      break;
    }
  }

  MappingResult r;
  r.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::max(shifted[i] - tau, 0.0);
    r.p[i] = d * d;
  }
  r.support.threshold = tau;
  finalize_sparse(r, shifted);
  r.support.threshold = tau + m;
  return r;
}

MappingResult entmax_bisect_full(std::span<const double> z, double alpha,
                                 int max_iter) {
  require_nonempty(z, "entmax_bisect");
  require(std::isfinite(alpha) && alpha > 1.0, ErrorCode::kInvalidArgument,
          "entmax_bisect: alpha must exceed 1");
  require(max_iter >= 1, ErrorCode::kInvalidArgument,
          "entmax_bisect: max_iter must be at least 1");
  const std::size_t n = z.size();
  const double am1 = alpha - 1.0;
  const double power = 1.0 / am1;
  const double m = am1 * max_of(z);
  std::vector<double> scaled(n);
  for (std::size_t i = 0; i < n; ++i) scaled[i] = am1 * z[i] - m;
  const std::vector<double> s = sorted_desc(scaled);

  auto mass = [&](double tau) {
    double total = 0.0;
    for (double v : s) {
      const double d = v - tau;
      if (d <= 0.0) break;
      total += std::pow(d, power);
    }
    return total;
  };

  // The top entry alone reaches mass 1 at tau = -1, and no entry can exceed
  // 1/n at tau = -(1/n)^(alpha-1), so this interval always brackets the root.
  double lo = -1.0;
  double hi = -std::pow(1.0 / static_cast<double>(n), am1);
  for (int it = 0; it < max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double tau = lo;

  MappingResult r;
  r.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = scaled[i] - tau;
    r.p[i] = d > 0.0 ? std::pow(d, power) : 0.0;
  }
  std::vector<double> order = sorted_desc(r.p);
  const double total = std::accumulate(order.begin(), order.end(), 0.0);
  for (double& v : r.p) v /= total;
  r.support.threshold = tau;
  finalize_sparse(r, scaled);
  r.support.threshold = tau + m;
  return r;
}

std::vector<double> entmax_bisect(std::span<const double> z, double alpha,
                                  int max_iter) {
  return entmax_bisect_full(z, alpha, max_iter).p;
}

MappingResult apply(const MappingKind& kind, std::span<const double> z) {
  switch (kind.tag()) {
    case MappingKind::Tag::kSoftmax: {
      MappingResult r;
      r.p = softmax(z);
      const double m = max_of(z);
      double total = 0.0;
      for (double v : z) total += std::exp(v - m);
      r.support.threshold = m + std::log(total);
      r.support.support_size = z.size();
      r.support.support_mask.assign(z.size(), true);
      return r;
    }
    case MappingKind::Tag::kSparsemax: return sparsemax(z);
    case MappingKind::Tag::kEntmax15: return entmax15(z);
    case MappingKind::Tag::kEntmaxAlpha:
      return entmax_bisect_full(z, kind.effective_alpha());
  }
  fail(ErrorCode::kInvalidArgument, "unknown mapping kind");
}

void mapping_backward_into(std::span<const double> p,
                           std::span<const double> upstream,
                           const MappingKind& kind, std::span<double> dz) {
  require(p.size() == upstream.size() && p.size() == dz.size(),
          ErrorCode::kInvalidArgument,
          "mapping_backward: length mismatch (p=" + std::to_string(p.size()) +
              ", upstream=" + std::to_string(upstream.size()) + ")");
  const double exponent = 2.0 - kind.effective_alpha();
  const auto tag = kind.tag();
  double gu = 0.0;
  double gsum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double g = 0.0;
    if (p[i] > 0.0) {
      switch (tag) {
        case MappingKind::Tag::kSoftmax: g = p[i]; break;
        case MappingKind::Tag::kSparsemax: g = 1.0; break;
        case MappingKind::Tag::kEntmax15: g = std::sqrt(p[i]); break;
        case MappingKind::Tag::kEntmaxAlpha: g = std::pow(p[i], exponent); break;
      }
    }
    dz[i] = g;
    gu += g * upstream[i];
    gsum += g;
  }
  const double ratio = gsum > 0.0 ? gu / gsum : 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    dz[i] = dz[i] * upstream[i] - ratio * dz[i];
  }
}

std::vector<double> mapping_backward(std::span<const double> p,
                                     std::span<const double> upstream,
                                     const MappingKind& kind) {
  std::vector<double> dz(p.size());
  mapping_backward_into(p, upstream, kind, dz);
  return dz;
}

}  // namespace salab::simplex
