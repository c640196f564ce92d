#include "otr/smoother.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "otr/parallel.hpp"

namespace otr {

namespace {

constexpr double kSqrt5 = 2.23606797749978969641;

double sample_sd(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return x.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

}  // namespace

double rule_of_thumb_bandwidth(std::span<const double> x) {
  return 1.06 * sample_sd(x) * std::pow(static_cast<double>(x.size()), -0.2);
}

LocalLinearSmoother::LocalLinearSmoother(std::span<const double> x, std::span<const double> r,
                                         std::span<const double> weights, double bandwidth)
    : bandwidth_(bandwidth), half_width_(kSqrt5 * bandwidth) {
  if (!(bandwidth > 0.0)) throw DataError("smoother bandwidth must be positive");
  if (x.size() != r.size() || x.size() != weights.size() || x.empty()) {
    throw DataError("smoother inputs must be non-empty and of equal length");
  }
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  x_.reserve(x.size());
  r_.reserve(x.size());
  w_.reserve(x.size());
  for (auto i : order) {
    x_.push_back(x[i]);
    r_.push_back(r[i]);
    w_.push_back(weights[i]);
  }
}

LocalLinearSmoother::Estimate LocalLinearSmoother::operator()(double x0) const {
  const auto lo = std::upper_bound(x_.begin(), x_.end(), x0 - half_width_) - x_.begin();
  const auto hi = std::lower_bound(x_.begin(), x_.end(), x0 + half_width_) - x_.begin();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
  const double inv_h2 = 1.0 / (half_width_ * half_width_);
  for (auto j = lo; j < hi; ++j) {
    const double d = x_[j] - x0;
    const double k = w_[j] * (1.0 - d * d * inv_h2);
    s0 += k;
    s1 += k * d;
    s2 += k * d * d;
    t0 += k * r_[j];
    t1 += k * d * r_[j];
  }
  if (!(s0 > 0.0)) {
    const auto it = std::lower_bound(x_.begin(), x_.end(), x0);
    std::size_t nearest = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - x_.begin(), x_.size() - 1));
    if (nearest > 0 && std::abs(x_[nearest - 1] - x0) <= std::abs(x_[nearest] - x0)) --nearest;
    return {r_[nearest], true};
  }
  const double det = s0 * s2 - s1 * s1;
  if (!(det > 1e-10 * s0 * s2)) return {t0 / s0, true};
  return {(s2 * t0 - s1 * t1) / det, false};
}

std::size_t LocalLinearSmoother::evaluate(std::span<const double> points, std::span<double> out) const {
  std::vector<unsigned char> fell_back(points.size(), 0);
  parallel_for(points.size(), [&](std::size_t i) {
    const auto e = (*this)(points[i]);
    out[i] = e.value;
    fell_back[i] = e.fallback;
  });
  return static_cast<std::size_t>(std::count(fell_back.begin(), fell_back.end(), 1));
}

AdditiveModel AdditiveModel::fit(const Matrix& x, const Vector& z, const Vector& weights,
                                 const Options& options, Diagnostics* diagnostics) {
  const auto n = x.rows();
  if (z.size() != n || weights.size() != n || n < 1) {
    throw DataError("additive model inputs must be non-empty and of equal length");
  }
  const double total_weight = weights.sum();
  if (!(total_weight > 0.0)) throw NumericalError("additive model weights sum to zero");

  AdditiveModel model;
  Diagnostics diag;

  std::vector<std::vector<double>> columns;
  std::vector<double> bandwidths;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    std::vector<double> col(x.col(k).begin(), x.col(k).end());
    const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
    if (*mn == *mx) continue;
    const double h = options.bandwidth > 0.0 ? options.bandwidth : rule_of_thumb_bandwidth(col);
    model.components_.push_back({k, {}, 0.0});
    columns.push_back(std::move(col));
    bandwidths.push_back(h);
  }
  diag.bandwidths = bandwidths;

  const std::span<const double> w(weights.data(), static_cast<std::size_t>(n));
  model.mean_ = weights.dot(z) / total_weight;
  std::vector<Vector> f(model.components_.size(), Vector::Zero(n));
  Vector partial(n), smooth(n);
  const double scale = 1.0 + (z.array() - model.mean_).abs().maxCoeff();

  for (int cycle = 1; cycle <= std::max(1, options.max_cycles); ++cycle) {
    double max_change = 0.0;
    std::size_t fallbacks = 0;
    for (std::size_t j = 0; j < model.components_.size(); ++j) {
      partial = z.array() - model.mean_;
      for (std::size_t k = 0; k < f.size(); ++k)
        if (k != j) partial -= f[k];
      auto& comp = model.components_[j];
      comp.smoother = LocalLinearSmoother(columns[j], {partial.data(), static_cast<std::size_t>(n)}, w,
                                          bandwidths[j]);
      fallbacks += comp.smoother.evaluate(columns[j], {smooth.data(), static_cast<std::size_t>(n)});
      comp.center = weights.dot(smooth) / total_weight;
      smooth.array() -= comp.center;
      max_change = std::max(max_change, (smooth - f[j]).cwiseAbs().maxCoeff());
      f[j] = smooth;
    }
    diag.cycles = cycle;
    diag.fallbacks = fallbacks;
    // A single smoothed column is exact after one pass.
    if (model.components_.size() <= 1 || max_change < options.tolerance * scale) {
      diag.converged = true;
      break;
    }
  }

  model.fitted_ = Vector::Constant(n, model.mean_);
  for (const auto& fj : f) model.fitted_ += fj;
  if (diagnostics) *diagnostics = std::move(diag);
  return model;
}

double AdditiveModel::predict(const Eigen::Ref<const Vector>& row) const {
  double value = mean_;
  for (const auto& c : components_) value += c.smoother(row(c.column)).value - c.center;
  return value;
}

}  // namespace otr
