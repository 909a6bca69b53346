#pragma once

// Test-only reference computations. Nothing here calls into the library code
// paths it is used to check (the gradient check only evaluates the loss).

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "htsr/spectral.hpp"
#include "htsr/toytrain.hpp"

namespace oracle {

/// Cyclic Jacobi rotations on a dense symmetric n x n matrix (row-major).
/// Returns eigenvalues in ascending order.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n,
                                              int max_sweeps = 100) {
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += at(i, i) * at(i, i);
      for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    }
    if (off <= 1e-30 * diag || off == 0.0) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p);
          const double akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k);
          const double aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = at(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// The smaller of W^T W and W W^T, by explicit loops.
inline std::vector<double> small_gram(const htsr::WeightMatrix& w, std::size_t* dim) {
  const bool tall = w.cols <= w.rows;
  const std::size_t n = tall ? w.cols : w.rows;
  const std::size_t inner = tall ? w.rows : w.cols;
  std::vector<double> g(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) {
        s += tall ? w.at(k, i) * w.at(k, j) : w.at(i, k) * w.at(j, k);
      }
      g[i * n + j] = s;
    }
  }
  *dim = n;
  return g;
}

inline std::vector<double> jacobi_spectrum(const htsr::WeightMatrix& w) {
  std::size_t n = 0;
  auto g = small_gram(w, &n);
  auto ev = jacobi_eigenvalues(std::move(g), n);
  for (double& v : ev) v = std::max(v, 0.0);
  return ev;
}

/// Hill estimator written directly from its definition on a descending copy.
inline double hill_reference(std::vector<double> values, std::size_t k) {
  std::sort(values.begin(), values.end(), std::greater<>());
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += std::log(values[i] / values[k]);
  return 1.0 + static_cast<double>(k) / s;
}

/// Samples with density p(x) ~ x^{-density_exponent} on [1, inf) by inverse
/// CDF: the survival function is x^{-(density_exponent - 1)}.
inline std::vector<double> pareto_sample(std::size_t n, double density_exponent, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n);
  for (double& x : out) {
    double v = u(gen);
    while (v <= 0.0) v = u(gen);
    x = std::pow(v, -1.0 / (density_exponent - 1.0));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Learning rate straight from the exponential form of the sigmoid schedule.
inline double sigmoid_lr_reference(double value, double mean, double eta, double s, double tau) {
  const double phi = s * (1.0 / (1.0 + std::exp(-tau * (value - mean))) - 0.5);
  return eta * std::pow(10.0, phi);
}

inline htsr::WeightMatrix gaussian_matrix(std::size_t rows, std::size_t cols, unsigned seed,
                                          std::string name = "w") {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  htsr::WeightMatrix w{std::move(name), rows, cols, std::vector<double>(rows * cols), {}};
  for (double& v : w.values) v = nd(gen);
  return w;
}

/// U diag(sigma) V^T with Haar-like orthogonal factors and Pareto singular
/// values (sigma ~ Pareto with survival index `tail`).
inline htsr::WeightMatrix heavy_tailed_matrix(std::size_t n, double tail, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd g1(n, n), g2(n, n);
  for (Eigen::Index i = 0; i < g1.size(); ++i) g1.data()[i] = nd(gen);
  for (Eigen::Index i = 0; i < g2.size(); ++i) g2.data()[i] = nd(gen);
  const Eigen::MatrixXd q1 = Eigen::HouseholderQR<Eigen::MatrixXd>(g1).householderQ();
  const Eigen::MatrixXd q2 = Eigen::HouseholderQR<Eigen::MatrixXd>(g2).householderQ();
  Eigen::VectorXd sigma(n);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    double v = u(gen);
    while (v <= 0.0) v = u(gen);
    sigma[i] = std::pow(v, -1.0 / tail);
  }
  const Eigen::MatrixXd m = q1 * sigma.asDiagonal() * q2.transpose();
  htsr::WeightMatrix w{"ht", n, n, std::vector<double>(n * n), {}};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) w.at(r, c) = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  return w;
}

/// Worst relative error between backprop gradients and central finite
/// differences of the full-batch loss, over every weight and bias.
inline double max_gradient_rel_error(htsr::MlpModel model, const htsr::Dataset& data, htsr::Loss loss,
                                     double h = 1e-6) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  htsr::Gradients g;
  htsr::loss_and_gradients(model, data, rows, loss, &g);
  auto rel_err = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
  };
  auto central = [&](double& p) {
    const double saved = p;
    p = saved + h;
    const double up = htsr::loss_and_gradients(model, data, rows, loss, nullptr);
    p = saved - h;
    const double down = htsr::loss_and_gradients(model, data, rows, loss, nullptr);
    p = saved;
    return (up - down) / (2 * h);
  };
  double worst = 0.0;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    for (std::size_t j = 0; j < model.weights[l].values.size(); ++j) {
      worst = std::max(worst, rel_err(g.weights[l][j], central(model.weights[l].values[j])));
    }
    for (std::size_t j = 0; j < model.biases[l].size(); ++j) {
      worst = std::max(worst, rel_err(g.biases[l][j], central(model.biases[l][j])));
    }
  }
  return worst;
}

/// Removes the directory tree on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("htsr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace oracle
