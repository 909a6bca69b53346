#include "htsr/toytrain.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "htsr/diagnostics.hpp"
#include "htsr/error.hpp"

namespace htsr {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;

ConstMap view(const WeightMatrix& w) {
  return {w.values.data(), static_cast<Eigen::Index>(w.rows), static_cast<Eigen::Index>(w.cols)};
}

RowMatrix activate(const RowMatrix& z, Activation act) {
  return act == Activation::Tanh ? RowMatrix(z.array().tanh()) : RowMatrix(z.cwiseMax(0.0));
}

RowMatrix activation_derivative(const RowMatrix& z, Activation act) {
  if (act == Activation::Tanh) return (1.0 - z.array().tanh().square()).matrix();
  return (z.array() > 0.0).cast<double>().matrix();
}

RowMatrix gather_rows(const std::vector<double>& src, std::size_t width,
                      std::span<const std::size_t> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                out.data() + i * width);
  }
  return out;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Loss value and dL/d(output) for a batch of outputs.
double output_loss(const RowMatrix& y, const RowMatrix& t, Loss loss, RowMatrix* dy) {
  const auto batch = static_cast<double>(y.rows());
  if (loss == Loss::MSE) {
    const RowMatrix diff = y - t;
    const double count = batch * static_cast<double>(y.cols());
    if (dy) *dy = (2.0 / count) * diff;
    return diff.squaredNorm() / count;
  }
  if (y.cols() == 1) {
    double total = 0.0;
    if (dy) dy->resize(y.rows(), 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      total += softplus(y(i, 0)) - t(i, 0) * y(i, 0);
      if (dy) (*dy)(i, 0) = (sigmoid(y(i, 0)) - t(i, 0)) / batch;
    }
    return total / batch;
  }
  double total = 0.0;
  if (dy) dy->resize(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double peak = y.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (y.row(i).array() - peak).exp().matrix();
    const double z = e.sum();
    const double log_z = std::log(z) + peak;
    total += -(t.row(i).array() * (y.row(i).array() - log_z)).sum();
    if (dy) dy->row(i) = (e / z - t.row(i)) / batch;
  }
  return total / batch;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

bool all_finite(const MlpModel& model) {
  for (const auto& w : model.weights) {
    if (!std::all_of(w.values.begin(), w.values.end(), [](double v) { return std::isfinite(v); })) {
      return false;
    }
  }
  for (const auto& b : model.biases) {
    if (!std::all_of(b.begin(), b.end(), [](double v) { return std::isfinite(v); })) return false;
  }
  return true;
}

double alpha_std_of(const ModelSpectra& spectra) {
  if (spectra.metrics.empty()) return 0.0;
  std::vector<double> alphas;
  for (const auto& m : spectra.metrics) alphas.push_back(m.alpha_hill);
  return population_mean_std(alphas).std;
}

}  // namespace

double Rng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

namespace {

MlpModel make_teacher(const DatasetSpec& spec) {
  Rng rng(spec.teacher_seed);
  MlpModel t;
  t.layer_dims = {spec.input_dim, spec.teacher_hidden, 1};
  t.activation = Activation::Tanh;
  for (std::size_t l = 0; l + 1 < t.layer_dims.size(); ++l) {
    const std::size_t in = t.layer_dims[l];
    const std::size_t out = t.layer_dims[l + 1];
    WeightMatrix w{"teacher" + std::to_string(l), out, in, std::vector<double>(out * in), {}};
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.values) v = scale * rng.normal();
    t.weights.push_back(std::move(w));
    t.biases.emplace_back(out, 0.0);
  }
  return t;
}

}  // namespace

std::vector<double> teacher_predict(const DatasetSpec& spec, std::span<const double> x) {
  return predict(make_teacher(spec), x);
}

Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.n < 2) throw Error(ErrorCode::InvalidArgument, "dataset needs n >= 2");
  if (spec.input_dim == 0) throw Error(ErrorCode::InvalidArgument, "input_dim must be >= 1");
  Rng rng(seed);
  Dataset d;
  d.input_dim = spec.input_dim;
  d.output_dim = 1;
  d.inputs.resize(spec.n * spec.input_dim);
  d.targets.resize(spec.n);
  if (spec.kind == DatasetKind::TeacherStudent) {
    for (double& v : d.inputs) v = rng.normal();
    d.targets = predict(make_teacher(spec), d.inputs);
    if (spec.noise_sigma > 0.0) {
      for (double& t : d.targets) t += spec.noise_sigma * rng.normal();
    }
    return d;
  }
  const double offset = spec.blob_separation / std::sqrt(static_cast<double>(spec.input_dim));
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double label = static_cast<double>(i % 2);
    const double centre = label == 0.0 ? -offset : offset;
    for (std::size_t j = 0; j < spec.input_dim; ++j) {
      d.inputs[i * spec.input_dim + j] = centre + rng.normal();
    }
    d.targets[i] = label;
  }
  return d;
}

Dataset subsample(const Dataset& data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "subsample ratio must lie in (0, 1]");
  }
  const std::size_t n = data.size();
  const std::size_t m =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n))));
  // Prefixes of one seeded permutation are nested across ratios.
  std::vector<std::size_t> order = all_rows(n);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  order.resize(m);
  std::sort(order.begin(), order.end());

  Dataset out;
  out.input_dim = data.input_dim;
  out.output_dim = data.output_dim;
  for (std::size_t row : order) {
    out.inputs.insert(out.inputs.end(), data.inputs.begin() + row * data.input_dim,
                      data.inputs.begin() + (row + 1) * data.input_dim);
    out.targets.insert(out.targets.end(), data.targets.begin() + row * data.output_dim,
                       data.targets.begin() + (row + 1) * data.output_dim);
  }
  return out;
}

MlpModel make_mlp(const std::vector<std::size_t>& layer_dims, Activation activation,
                  std::uint64_t seed) {
  if (layer_dims.size() < 2 ||
      std::any_of(layer_dims.begin(), layer_dims.end(), [](std::size_t d) { return d == 0; })) {
    throw Error(ErrorCode::InvalidArgument, "an MLP needs at least two positive layer widths");
  }
  Rng rng(seed);
  MlpModel m;
  m.layer_dims = layer_dims;
  m.activation = activation;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t in = layer_dims[l];
    const std::size_t out = layer_dims[l + 1];
    const std::string name = "fc" + std::to_string(l);
    WeightMatrix w{name, out, in, std::vector<double>(out * in), name};
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (double& v : w.values) v = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(out, 0.0);
  }
  return m;
}

std::vector<double> predict(const MlpModel& model, std::span<const double> inputs) {
  const std::size_t in = model.layer_dims.front();
  if (inputs.size() % in != 0) {
    throw Error(ErrorCode::ShapeMismatch, "input length is not a multiple of the input width");
  }
  RowMatrix a = ConstMap(inputs.data(), static_cast<Eigen::Index>(inputs.size() / in),
                         static_cast<Eigen::Index>(in));
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const Eigen::Map<const Eigen::RowVectorXd> b(model.biases[l].data(),
                                                 static_cast<Eigen::Index>(model.biases[l].size()));
    RowMatrix z = a * view(model.weights[l]).transpose();
    z.rowwise() += b;
    a = l + 1 < model.weights.size() ? activate(z, model.activation) : z;
  }
  return {a.data(), a.data() + a.size()};
}

double loss_and_gradients(const MlpModel& model, const Dataset& data,
                          std::span<const std::size_t> rows, Loss loss, Gradients* grads) {
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "empty batch");
  if (data.input_dim != model.layer_dims.front() || data.output_dim != model.layer_dims.back()) {
    throw Error(ErrorCode::ShapeMismatch, "dataset does not match the model's input/output widths");
  }
  const std::size_t depth = model.weights.size();
  std::vector<RowMatrix> acts{gather_rows(data.inputs, data.input_dim, rows)};
  std::vector<RowMatrix> pre;
  for (std::size_t l = 0; l < depth; ++l) {
    const Eigen::Map<const Eigen::RowVectorXd> b(model.biases[l].data(),
                                                 static_cast<Eigen::Index>(model.biases[l].size()));
    RowMatrix z = acts.back() * view(model.weights[l]).transpose();
    z.rowwise() += b;
    pre.push_back(z);
    acts.push_back(l + 1 < depth ? activate(z, model.activation) : z);
  }
  const RowMatrix targets = gather_rows(data.targets, data.output_dim, rows);
  RowMatrix delta;
  const double value = output_loss(acts.back(), targets, loss, grads ? &delta : nullptr);
  if (!grads) return value;

  grads->weights.assign(depth, {});
  grads->biases.assign(depth, {});
  for (std::size_t l = depth; l-- > 0;) {
    const RowMatrix dw = delta.transpose() * acts[l];
    const Eigen::RowVectorXd db = delta.colwise().sum();
    grads->weights[l].assign(dw.data(), dw.data() + dw.size());
    grads->biases[l].assign(db.data(), db.data() + db.size());
    if (l > 0) {
      delta = (delta * view(model.weights[l])).cwiseProduct(
          activation_derivative(pre[l - 1], model.activation));
    }
  }
  return value;
}

double evaluate_loss(const MlpModel& model, const Dataset& data, Loss loss) {
  const auto rows = all_rows(data.size());
  return loss_and_gradients(model, data, rows, loss, nullptr);
}

ModelSpectra analyze_model(const MlpModel& model, const KPolicy& policy) {
  ModelSpectra out;
  for (const auto& w : model.weights) {
    if (!is_eligible(w)) {
      out.unanalyzed.push_back(w.name);
      continue;
    }
    try {
      out.metrics.push_back(analyze_layer(w, policy));
    } catch (const Error&) {
      out.unanalyzed.push_back(w.name);
    }
  }
  return out;
}

RunHistory train(MlpModel& model, const Dataset& train_set, const Dataset& test_set,
                 const TrainConfig& cfg) {
  validate(cfg.schedule);
  if (cfg.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (cfg.batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");

  const Dataset data = subsample(train_set, cfg.subsample_ratio, cfg.seed);
  const std::size_t n = data.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;

  BlockMap blocks;
  for (const auto& w : model.weights) {
    if (w.block_id) blocks[w.name] = *w.block_id;
  }

  Rng shuffler(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order = all_rows(n);
  RunHistory history;
  Gradients grads;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ModelSpectra spectra = analyze_model(model, cfg.k_policy);
    std::map<std::string, double> factors;
    if (spectra.metrics.empty()) {
      for (const auto& w : model.weights) factors[w.name] = 1.0;
    } else {
      factors = layer_lr_factors(spectra.metrics, blocks, cfg.schedule, spectra.unanalyzed);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.alpha_std = alpha_std_of(spectra);
    const double eta_first = base_lr(cfg.schedule.base, step, epoch);
    for (const auto& [name, f] : factors) record.per_layer_lrs[name] = eta_first * f;

    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffler.below(i)]);
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t begin = s * batch;
      const std::size_t end = std::min(n, begin + batch);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      loss_and_gradients(model, data, rows, cfg.loss, &grads);
      const double eta = base_lr(cfg.schedule.base, step, epoch);
      for (std::size_t l = 0; l < model.weights.size(); ++l) {
        const double lr = eta * factors.at(model.weights[l].name);
        auto& w = model.weights[l].values;
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * grads.weights[l][j];
        auto& b = model.biases[l];
        for (std::size_t j = 0; j < b.size(); ++j) b[j] -= lr * grads.biases[l][j];
      }
    }

    record.train_loss = evaluate_loss(model, data, cfg.loss);
    record.test_loss = evaluate_loss(model, test_set, cfg.loss);
    if (!std::isfinite(record.train_loss) || !std::isfinite(record.test_loss) || !all_finite(model)) {
      history.diverged = true;
      break;
    }
    history.per_epoch.push_back(std::move(record));
  }
  if (!history.diverged) history.final_alpha_std = alpha_std_of(analyze_model(model, cfg.k_policy));
  else if (!history.per_epoch.empty()) history.final_alpha_std = history.per_epoch.back().alpha_std;
  return history;
}

nlohmann::json to_json(const RunHistory& history) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : history.per_epoch) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"test_loss", e.test_loss},
                      {"alpha_std", e.alpha_std},
                      {"lrs", e.per_layer_lrs}});
  }
  return {{"diverged", history.diverged},
          {"final_alpha_std", history.final_alpha_std},
          {"epochs", std::move(epochs)}};
}

std::string history_csv(const RunHistory& history) {
  std::ostringstream out;
  out << "epoch,train_loss,test_loss,alpha_std";
  if (!history.per_epoch.empty()) {
    for (const auto& [name, lr] : history.per_epoch.front().per_layer_lrs) out << ",lr[" << name << ']';
  }
  out << '\n';
  for (const auto& e : history.per_epoch) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.test_loss) << ','
        << format_double(e.alpha_std);
    for (const auto& [name, lr] : e.per_layer_lrs) out << ',' << format_double(lr);
    out << '\n';
  }
  return out.str();
}

}  // namespace htsr
