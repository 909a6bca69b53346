#pragma once

// Empirical spectral densities of layer weight matrices and the shape metrics
// derived from them (Hill tail exponent, spectral norm, stable rank).

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace htsr {

/// A named, row-major 2-D weight array. `block_id` groups layers that share a
/// learning rate under per-block scheduling.
struct WeightMatrix {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::optional<std::string> block_id;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

/// Throws ShapeMismatch for a bad shape and NonFiniteInput for NaN/Inf.
void validate(const WeightMatrix& w);

/// Ascending eigenvalues of the layer correlation matrix W^T W.
struct LayerSpectrum {
  std::string layer_name;
  std::vector<double> eigenvalues;

  std::size_t size() const noexcept { return eigenvalues.size(); }
  double max() const noexcept { return eigenvalues.empty() ? 0.0 : eigenvalues.back(); }
};

struct EsdMetrics {
  std::string layer_name;
  double alpha_hill = 0.0;
  std::size_t k_used = 0;
  double spectral_norm = 0.0;  // lambda_max of W^T W, i.e. sigma_max(W)^2
  double stable_rank = 0.0;
};

enum class SpectrumMethod {
  Auto,  // currently the SVD path
  Svd,   // squared singular values of W
  Gram,  // symmetric eigendecomposition of the smaller Gram matrix
};

/// Returns the min(rows, cols) eigenvalues of W^T W in ascending order.
/// Negative round-off from the Gram path is clamped to zero.
LayerSpectrum compute_spectrum(const WeightMatrix& w, SpectrumMethod method = SpectrumMethod::Auto);

/// Eigenvalues at or below `relative_floor * lambda_max` are dropped before
/// tail fitting; rank-deficient layers would otherwise feed log(0).
inline constexpr double kDefaultZeroFloor = 1e-12;

/// Hill estimate of the power-law exponent of the ESD tail:
///   1 + k / sum_{i=1..k} ln(lambda_{n-i+1} / lambda_{n-k})
/// over the filtered ascending spectrum. Throws InsufficientSpectrum when
/// fewer than k+1 positive eigenvalues remain and DegenerateTail when the
/// top-k eigenvalues all equal lambda_{n-k}.
double hill_alpha(std::span<const double> ascending, std::size_t k,
                  double relative_floor = kDefaultZeroFloor);
double hill_alpha(const LayerSpectrum& spectrum, std::size_t k,
                  double relative_floor = kDefaultZeroFloor);

struct FixedRatio {
  double ratio = 0.5;
};
struct AbsoluteK {
  std::size_t k = 1;
};
/// How many top eigenvalues enter the Hill fit.
using KPolicy = std::variant<FixedRatio, AbsoluteK>;

/// Resolves k against the number of positive eigenvalues actually fitted.
/// The result is clamped to [1, positive_count - 1].
std::size_t resolve_k(const KPolicy& policy, std::size_t positive_count);

/// Number of eigenvalues that survive the zero floor.
std::size_t positive_count(std::span<const double> ascending,
                           double relative_floor = kDefaultZeroFloor);

EsdMetrics shape_metrics(const LayerSpectrum& spectrum, const KPolicy& policy = FixedRatio{});

/// Spectral norm and stable rank only, for layers whose tail cannot be fitted.
/// alpha_hill is NaN and k_used is 0. Throws ZeroSpectrum.
EsdMetrics norm_metrics(const LayerSpectrum& spectrum);

/// Layers with a smaller dimension below this are not analyzed.
inline constexpr std::size_t kMinEligibleDim = 8;

bool is_eligible(const WeightMatrix& w, std::size_t min_dim = kMinEligibleDim) noexcept;

/// compute_spectrum followed by shape_metrics.
EsdMetrics analyze_layer(const WeightMatrix& w, const KPolicy& policy = FixedRatio{});

}  // namespace htsr
