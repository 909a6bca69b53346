#pragma once

// A small deterministic MLP trainer with per-layer learning rates. It closes
// the loop diagnose -> schedule -> train on synthetic low-data tasks.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "htsr/scheduler.hpp"
#include "htsr/spectral.hpp"

namespace htsr {

/// mt19937_64 is fully specified by the standard; the distributions below are
/// written out so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

struct Dataset {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<double> inputs;   // size() x input_dim, row-major
  std::vector<double> targets;  // size() x output_dim, row-major

  std::size_t size() const noexcept { return input_dim == 0 ? 0 : inputs.size() / input_dim; }
};

enum class DatasetKind { TeacherStudent, TwoClassBlobs };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::TeacherStudent;
  std::size_t n = 1000;
  std::size_t input_dim = 16;
  double noise_sigma = 0.05;       // TeacherStudent label noise
  std::uint64_t teacher_seed = 7;  // fixes the teacher independently of the sample seed
  std::size_t teacher_hidden = 32;
  double blob_separation = 1.5;    // distance of each blob centre from the origin
};

/// Deterministic in (spec, seed). TeacherStudent draws standard-normal inputs
/// and labels them with a fixed random tanh teacher plus Gaussian noise.
/// TwoClassBlobs alternates labels 0/1 so classes are balanced.
Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed);

/// Teacher output for a single input, exposed so noise-free labels can be checked.
std::vector<double> teacher_predict(const DatasetSpec& spec, std::span<const double> x);

/// Uniform sample without replacement of max(1, floor(ratio * n)) examples in
/// original order. For a fixed seed, a smaller ratio selects a subset of a
/// larger one.
Dataset subsample(const Dataset& data, double ratio, std::uint64_t seed);

enum class Activation { Tanh, ReLU };
enum class Loss { MSE, CrossEntropy };

/// weights[l] maps layer_dims[l] -> layer_dims[l+1] and is stored out x in.
/// Hidden layers apply the activation; the last layer is linear.
struct MlpModel {
  std::vector<std::size_t> layer_dims;
  std::vector<WeightMatrix> weights;
  std::vector<std::vector<double>> biases;
  Activation activation = Activation::Tanh;
};

/// He-style uniform init U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
MlpModel make_mlp(const std::vector<std::size_t>& layer_dims, Activation activation,
                  std::uint64_t seed);

/// Outputs (logits for CrossEntropy) for every row of `inputs`.
std::vector<double> predict(const MlpModel& model, std::span<const double> inputs);

struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
};

/// Mean loss over the selected rows and, if `grads` is non-null, its gradient.
/// MSE averages (y - t)^2 over rows and outputs. CrossEntropy is sigmoid
/// binary cross-entropy for one output and softmax cross-entropy otherwise.
double loss_and_gradients(const MlpModel& model, const Dataset& data,
                          std::span<const std::size_t> rows, Loss loss, Gradients* grads);

double evaluate_loss(const MlpModel& model, const Dataset& data, Loss loss);

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 1;
  std::size_t batch_size = 32;
  ScheduleConfig schedule;
  double subsample_ratio = 1.0;
  Loss loss = Loss::MSE;
  KPolicy k_policy = FixedRatio{};
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double alpha_std = 0.0;                       // of the weights the epoch's lrs came from
  std::map<std::string, double> per_layer_lrs;  // at the first step of the epoch
};

struct RunHistory {
  std::vector<EpochRecord> per_epoch;
  double final_alpha_std = 0.0;  // after the last completed epoch
  bool diverged = false;         // a loss or weight went non-finite; history is truncated there
};

/// Per epoch: fit metrics on the live weights of eligible layers, assign
/// per-layer lr factors, run one shuffled pass of plain mini-batch SGD, and
/// record losses. The training set is first subsampled by cfg.subsample_ratio.
/// A schedule function of Off is the uniform-lr baseline. Deterministic in
/// (model, data, cfg).
RunHistory train(MlpModel& model, const Dataset& train_set, const Dataset& test_set,
                 const TrainConfig& cfg);

/// Layer metrics of the model's current weights; ineligible or unfittable
/// layers are listed in `unanalyzed`.
struct ModelSpectra {
  std::vector<EsdMetrics> metrics;
  std::vector<std::string> unanalyzed;
};
ModelSpectra analyze_model(const MlpModel& model, const KPolicy& policy);

nlohmann::json to_json(const RunHistory& history);
/// Columns: epoch,train_loss,test_loss,alpha_std,lr[<layer>]...
std::string history_csv(const RunHistory& history);

}  // namespace htsr
