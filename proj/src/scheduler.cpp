#include "htsr/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "htsr/error.hpp"

namespace htsr {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double mean_of(const std::vector<double>& xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

// A scheduling unit is a layer (PerLayer) or a block (PerBlock).
struct Unit {
  std::string key;
  std::vector<std::string> layers;
  double value = 0.0;
};

std::vector<Unit> group_units(const std::vector<EsdMetrics>& metrics, const BlockMap& blocks,
                              const ScheduleConfig& cfg) {
  std::vector<Unit> units;
  if (cfg.granularity == Granularity::PerLayer) {
    for (const auto& m : metrics) {
      units.push_back({m.layer_name, {m.layer_name}, metric_value(m, cfg.metric)});
    }
    return units;
  }
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& m : metrics) {
    auto it = blocks.find(m.layer_name);
    if (it == blocks.end()) {
      throw Error(ErrorCode::MissingBlockId,
                  "layer '" + m.layer_name + "' has no block id under per-block granularity");
    }
    auto [pos, inserted] = index.emplace(it->second, units.size());
    if (inserted) {
      units.push_back({it->second, {}, 0.0});
      values.emplace_back();
    }
    units[pos->second].layers.push_back(m.layer_name);
    values[pos->second].push_back(metric_value(m, cfg.metric));
  }
  for (std::size_t i = 0; i < units.size(); ++i) units[i].value = mean_of(values[i]);
  return units;
}

}  // namespace

void validate(const BaseSchedule& schedule) {
  if (!(schedule.eta0 > 0.0) || !std::isfinite(schedule.eta0)) {
    throw Error(ErrorCode::InvalidArgument, "eta0 must be positive");
  }
  std::visit(overloaded{
                 [](const ConstantLr&) {},
                 [](const LinearWarmupDecay& s) {
                   if (!(s.warmup_ratio >= 0.0 && s.warmup_ratio < 1.0)) {
                     throw Error(ErrorCode::InvalidArgument, "warmup_ratio must lie in [0, 1)");
                   }
                   if (s.total_steps < 1) {
                     throw Error(ErrorCode::InvalidArgument, "total_steps must be >= 1");
                   }
                 },
                 [](const StepDecay& s) {
                   if (!(s.gamma > 0.0 && s.gamma <= 1.0)) {
                     throw Error(ErrorCode::InvalidArgument, "gamma must lie in (0, 1]");
                   }
                   if (s.period_epochs < 1) {
                     throw Error(ErrorCode::InvalidArgument, "period_epochs must be >= 1");
                   }
                 },
             },
             schedule.kind);
}

double base_lr(const BaseSchedule& schedule, std::int64_t step, std::int64_t epoch) {
  if (step < 0 || epoch < 0) throw Error(ErrorCode::InvalidStep, "step and epoch must be >= 0");
  const double eta0 = schedule.eta0;
  return std::visit(
      overloaded{
          [&](const ConstantLr&) { return eta0; },
          [&](const LinearWarmupDecay& s) {
            if (step > s.total_steps) {
              throw Error(ErrorCode::InvalidStep, "step " + std::to_string(step) +
                                                      " exceeds total_steps " +
                                                      std::to_string(s.total_steps));
            }
            const auto warmup = static_cast<std::int64_t>(
                std::ceil(s.warmup_ratio * static_cast<double>(s.total_steps)));
            if (step < warmup) {
              return eta0 * static_cast<double>(step) / static_cast<double>(warmup);
            }
            if (step >= s.total_steps) return 0.0;
            return eta0 * static_cast<double>(s.total_steps - step) /
                   static_cast<double>(s.total_steps - warmup);
          },
          [&](const StepDecay& s) {
            return eta0 * std::pow(s.gamma, static_cast<double>(epoch / s.period_epochs));
          },
      },
      schedule.kind);
}

MetricDirection default_direction(Metric metric) noexcept {
  return metric == Metric::SpectralNorm ? MetricDirection::LowerMeansUndertrained
                                        : MetricDirection::HigherMeansUndertrained;
}

void validate(const ScheduleConfig& cfg) {
  validate(cfg.base);
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) {
    throw Error(ErrorCode::InvalidArgument, "tau must be positive");
  }
  if (!(cfg.s_above >= 0.0) || !(cfg.s_below >= 0.0) || !std::isfinite(cfg.s_above) ||
      !std::isfinite(cfg.s_below)) {
    throw Error(ErrorCode::InvalidArgument, "s_above and s_below must be >= 0");
  }
  if (cfg.metric == Metric::AlphaHill &&
      cfg.direction != MetricDirection::HigherMeansUndertrained) {
    throw Error(ErrorCode::InvalidArgument,
                "the alpha metric is always read as higher-means-undertrained");
  }
  if (cfg.function == ScheduleFunction::LinearMap && !(cfg.s_above < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "linear map requires s < 1");
  }
}

double tb_sigmoid_exponent(double value, double mean, const ScheduleConfig& cfg) {
  double d = value - mean;
  if (cfg.direction == MetricDirection::LowerMeansUndertrained) d = -d;
  const double s = d >= 0.0 ? cfg.s_above : cfg.s_below;
  // sigmoid(x) - 1/2 == tanh(x/2)/2; the tanh form is exactly odd in x.
  return s * 0.5 * std::tanh(0.5 * cfg.tau * d);
}

double tb_sigmoid_lr(double value, double mean, double eta_t, const ScheduleConfig& cfg) {
  return eta_t * std::pow(10.0, tb_sigmoid_exponent(value, mean, cfg));
}

std::vector<std::pair<std::string, double>> tb_linear_map_lr(
    const std::vector<std::pair<std::string, double>>& values, double eta_t, double s) {
  std::vector<std::pair<std::string, double>> out;
  out.reserve(values.size());
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(
      values.begin(), values.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  const double lo = lo_it->second;
  const double spread = hi_it->second - lo;
  for (const auto& [name, v] : values) {
    if (!(spread > 0.0) || s == 0.0) {
      out.emplace_back(name, eta_t);
      continue;
    }
    const double a = (v - lo) / spread;
    out.emplace_back(name, eta_t * ((1.0 - s) + 2.0 * s * a));
  }
  return out;
}

double metric_value(const EsdMetrics& m, Metric metric) noexcept {
  switch (metric) {
    case Metric::AlphaHill: return m.alpha_hill;
    case Metric::SpectralNorm: return m.spectral_norm;
    case Metric::StableRank: return m.stable_rank;
  }
  return m.alpha_hill;
}

std::map<std::string, double> layer_lr_factors(const std::vector<EsdMetrics>& metrics,
                                               const BlockMap& blocks, const ScheduleConfig& cfg,
                                               const std::vector<std::string>& unanalyzed) {
  validate(cfg);
  std::map<std::string, double> factors;
  for (const auto& name : unanalyzed) factors[name] = 1.0;
  if (cfg.function == ScheduleFunction::Off) {
    for (const auto& m : metrics) factors[m.layer_name] = 1.0;
    return factors;
  }
  if (metrics.empty()) {
    throw Error(ErrorCode::EmptyInput, "no analyzed layers to schedule");
  }
  const std::vector<Unit> units = group_units(metrics, blocks, cfg);

  if (cfg.function == ScheduleFunction::Sigmoid) {
    std::vector<double> vals;
    for (const auto& u : units) vals.push_back(u.value);
    const double mean = mean_of(vals);
    for (const auto& u : units) {
      const double f = std::pow(10.0, tb_sigmoid_exponent(u.value, mean, cfg));
      for (const auto& layer : u.layers) factors[layer] = f;
    }
    return factors;
  }

  std::vector<std::pair<std::string, double>> keyed;
  for (const auto& u : units) {
    const double v = cfg.direction == MetricDirection::LowerMeansUndertrained ? -u.value : u.value;
    keyed.emplace_back(u.key, v);
  }
  const auto mapped = tb_linear_map_lr(keyed, 1.0, cfg.s_above);
  for (std::size_t i = 0; i < units.size(); ++i) {
    for (const auto& layer : units[i].layers) factors[layer] = mapped[i].second;
  }
  return factors;
}

LrAssignment assign_lrs(const std::vector<EsdMetrics>& metrics, const BlockMap& blocks,
                        const ScheduleConfig& cfg, double eta_t, std::int64_t step,
                        const std::vector<std::string>& unanalyzed) {
  if (!(eta_t > 0.0)) throw Error(ErrorCode::InvalidArgument, "eta_t must be positive");
  LrAssignment out;
  out.step = step;
  out.base_lr = eta_t;
  for (const auto& [name, f] : layer_lr_factors(metrics, blocks, cfg, unanalyzed)) {
    out.per_layer[name] = eta_t * f;
  }
  return out;
}

LrBounds lr_bounds(const ScheduleConfig& cfg, double eta_t) noexcept {
  switch (cfg.function) {
    case ScheduleFunction::Sigmoid:
      return {eta_t * std::pow(10.0, -cfg.s_below / 2.0), eta_t * std::pow(10.0, cfg.s_above / 2.0)};
    case ScheduleFunction::LinearMap:
      return {eta_t * (1.0 - cfg.s_above), eta_t * (1.0 + cfg.s_above)};
    case ScheduleFunction::Off:
      break;
  }
  return {eta_t, eta_t};
}

bool within_bounds(const LrAssignment& assignment, const ScheduleConfig& cfg) noexcept {
  const LrBounds b = lr_bounds(cfg, assignment.base_lr);
  // One ulp of slack for the product eta_t * factor.
  const double lo = std::nextafter(b.lo, 0.0);
  const double hi = std::nextafter(b.hi, b.hi * 2.0);
  return std::all_of(assignment.per_layer.begin(), assignment.per_layer.end(),
                     [&](const auto& kv) { return kv.second >= lo && kv.second <= hi; });
}

std::string_view to_string(ScheduleFunction f) noexcept {
  switch (f) {
    case ScheduleFunction::Sigmoid: return "sigmoid";
    case ScheduleFunction::LinearMap: return "linear-map";
    case ScheduleFunction::Off: return "off";
  }
  return "sigmoid";
}

std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::AlphaHill: return "alpha";
    case Metric::SpectralNorm: return "spectral-norm";
    case Metric::StableRank: return "stable-rank";
  }
  return "alpha";
}

std::string_view to_string(Granularity g) noexcept {
  return g == Granularity::PerLayer ? "per-layer" : "per-block";
}

std::string_view to_string(MetricDirection d) noexcept {
  return d == MetricDirection::HigherMeansUndertrained ? "higher-undertrained"
                                                       : "lower-undertrained";
}

std::optional<ScheduleFunction> parse_function(std::string_view s) noexcept {
  if (s == "sigmoid") return ScheduleFunction::Sigmoid;
  if (s == "linear-map") return ScheduleFunction::LinearMap;
  if (s == "off") return ScheduleFunction::Off;
  return std::nullopt;
}

std::optional<Metric> parse_metric(std::string_view s) noexcept {
  if (s == "alpha") return Metric::AlphaHill;
  if (s == "spectral-norm") return Metric::SpectralNorm;
  if (s == "stable-rank") return Metric::StableRank;
  return std::nullopt;
}

std::optional<Granularity> parse_granularity(std::string_view s) noexcept {
  if (s == "per-layer") return Granularity::PerLayer;
  if (s == "per-block") return Granularity::PerBlock;
  return std::nullopt;
}

std::optional<MetricDirection> parse_direction(std::string_view s) noexcept {
  if (s == "higher-undertrained") return MetricDirection::HigherMeansUndertrained;
  if (s == "lower-undertrained") return MetricDirection::LowerMeansUndertrained;
  return std::nullopt;
}

}  // namespace htsr
