#include "htsr/spectral.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "htsr/error.hpp"

namespace htsr {
namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajorMatrix> as_eigen(const WeightMatrix& w) {
  return {w.values.data(), static_cast<Eigen::Index>(w.rows), static_cast<Eigen::Index>(w.cols)};
}

std::vector<double> svd_eigenvalues(const WeightMatrix& w) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(as_eigen(w));
  const Eigen::VectorXd& sigma = svd.singularValues();
  std::vector<double> out(static_cast<std::size_t>(sigma.size()));
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    out[static_cast<std::size_t>(i)] = sigma[i] * sigma[i];
  }
  return out;
}

std::vector<double> gram_eigenvalues(const WeightMatrix& w) {
  const auto m = as_eigen(w);
  // The nonzero spectrum of W^T W equals that of W W^T; use the smaller one.
  Eigen::MatrixXd gram = w.cols <= w.rows ? Eigen::MatrixXd(m.transpose() * m)
                                          : Eigen::MatrixXd(m * m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::NonFiniteInput, "eigensolver failed for layer '" + w.name + "'");
  }
  const Eigen::VectorXd& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

}  // namespace

void validate(const WeightMatrix& w) {
  if (w.rows == 0 || w.cols == 0 || w.values.size() != w.rows * w.cols) {
    throw Error(ErrorCode::ShapeMismatch,
                "layer '" + w.name + "' declares " + std::to_string(w.rows) + "x" +
                    std::to_string(w.cols) + " but holds " + std::to_string(w.values.size()) +
                    " values");
  }
  for (double v : w.values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::NonFiniteInput, "layer '" + w.name + "' contains NaN or Inf");
    }
  }
}

LayerSpectrum compute_spectrum(const WeightMatrix& w, SpectrumMethod method) {
  validate(w);
  LayerSpectrum out;
  out.layer_name = w.name;
  out.eigenvalues = method == SpectrumMethod::Gram ? gram_eigenvalues(w) : svd_eigenvalues(w);
  for (double& v : out.eigenvalues) v = std::max(v, 0.0);
  std::sort(out.eigenvalues.begin(), out.eigenvalues.end());
  return out;
}

std::size_t positive_count(std::span<const double> ascending, double relative_floor) {
  if (ascending.empty()) return 0;
  const double floor = relative_floor * ascending.back();
  const auto first = std::upper_bound(ascending.begin(), ascending.end(), floor);
  if (ascending.back() <= 0.0) return 0;
  return static_cast<std::size_t>(ascending.end() - first);
}

double hill_alpha(std::span<const double> ascending, std::size_t k, double relative_floor) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "hill_alpha requires k >= 1");
  const std::size_t n = positive_count(ascending, relative_floor);
  if (n < k + 1) {
    throw Error(ErrorCode::InsufficientSpectrum,
                "need " + std::to_string(k + 1) + " positive eigenvalues, have " +
                    std::to_string(n));
  }
  const auto tail = ascending.last(n);
  const double threshold = tail[n - k - 1];  // lambda_{n-k}, 1-based
  double log_sum = 0.0;
  for (std::size_t i = n - k; i < n; ++i) {
    log_sum += std::log(tail[i] / threshold);
  }
  if (!(log_sum > 0.0)) {
    throw Error(ErrorCode::DegenerateTail, "top-k eigenvalues are all equal to lambda_{n-k}");
  }
  return 1.0 + static_cast<double>(k) / log_sum;
}

double hill_alpha(const LayerSpectrum& spectrum, std::size_t k, double relative_floor) {
  return hill_alpha(std::span<const double>(spectrum.eigenvalues), k, relative_floor);
}

std::size_t resolve_k(const KPolicy& policy, std::size_t positive) {
  const std::size_t upper = positive > 1 ? positive - 1 : 1;
  std::size_t k = std::visit(
      [&](const auto& p) -> std::size_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FixedRatio>) {
          if (!(p.ratio > 0.0 && p.ratio <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "k ratio must lie in (0, 1]");
          }
          return static_cast<std::size_t>(std::floor(p.ratio * static_cast<double>(positive)));
        } else {
          return p.k;
        }
      },
      policy);
  return std::clamp<std::size_t>(k, 1, upper);
}

EsdMetrics norm_metrics(const LayerSpectrum& spectrum) {
  if (spectrum.eigenvalues.empty() || !(spectrum.max() > 0.0)) {
    throw Error(ErrorCode::ZeroSpectrum, "layer '" + spectrum.layer_name + "' has lambda_max = 0");
  }
  EsdMetrics m;
  m.layer_name = spectrum.layer_name;
  m.alpha_hill = std::numeric_limits<double>::quiet_NaN();
  m.spectral_norm = spectrum.max();
  const double total =
      std::accumulate(spectrum.eigenvalues.begin(), spectrum.eigenvalues.end(), 0.0);
  // Summation round-off can land a hair outside [1, n].
  m.stable_rank = std::clamp(total / m.spectral_norm, 1.0, static_cast<double>(spectrum.size()));
  return m;
}

EsdMetrics shape_metrics(const LayerSpectrum& spectrum, const KPolicy& policy) {
  EsdMetrics m = norm_metrics(spectrum);
  m.k_used = resolve_k(policy, positive_count(spectrum.eigenvalues));
  m.alpha_hill = hill_alpha(spectrum, m.k_used);
  return m;
}

bool is_eligible(const WeightMatrix& w, std::size_t min_dim) noexcept {
  return std::min(w.rows, w.cols) >= min_dim;
}

EsdMetrics analyze_layer(const WeightMatrix& w, const KPolicy& policy) {
  return shape_metrics(compute_spectrum(w), policy);
}

}  // namespace htsr
