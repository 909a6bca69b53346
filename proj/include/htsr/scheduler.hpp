#pragma once

// Layer-wise learning-rate assignment from ESD shape metrics, stacked on a
// global base schedule.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "htsr/spectral.hpp"

namespace htsr {

struct ConstantLr {};

/// Linear ramp from 0 over ceil(warmup_ratio * total_steps) steps, then linear
/// decay to 0 at total_steps.
struct LinearWarmupDecay {
  double warmup_ratio = 0.06;
  std::int64_t total_steps = 1;
};

/// eta0 * gamma^floor(epoch / period_epochs).
struct StepDecay {
  double gamma = 0.5;
  std::int64_t period_epochs = 100;
};

struct BaseSchedule {
  std::variant<ConstantLr, LinearWarmupDecay, StepDecay> kind;
  double eta0 = 1e-3;
};

void validate(const BaseSchedule& schedule);

/// Base learning rate eta_t. Throws InvalidStep for negative step/epoch or a
/// step beyond total_steps of a linear schedule.
double base_lr(const BaseSchedule& schedule, std::int64_t step, std::int64_t epoch);

enum class ScheduleFunction { Sigmoid, LinearMap, Off };
enum class Metric { AlphaHill, SpectralNorm, StableRank };
enum class Granularity { PerLayer, PerBlock };
enum class MetricDirection { HigherMeansUndertrained, LowerMeansUndertrained };

/// Heuristic default: a larger spectral norm is read as a more trained layer,
/// a larger stable rank or alpha as a less trained one.
MetricDirection default_direction(Metric metric) noexcept;

struct ScheduleConfig {
  BaseSchedule base;
  ScheduleFunction function = ScheduleFunction::Sigmoid;
  Metric metric = Metric::AlphaHill;
  double s_above = 1.0;  // applies when the layer metric is at or above the mean
  double s_below = 1.0;
  double tau = 10.0;
  Granularity granularity = Granularity::PerBlock;
  MetricDirection direction = MetricDirection::HigherMeansUndertrained;
};

/// Throws InvalidArgument on tau <= 0, negative s, or a direction other than
/// HigherMeansUndertrained for the alpha metric. LinearMap additionally
/// requires s_above < 1 since it is the spread of the linear map.
void validate(const ScheduleConfig& cfg);

/// Exponent phi = s * (sigmoid(tau * d) - 0.5), d = value - mean (negated for
/// LowerMeansUndertrained), s = s_above for d >= 0 and s_below otherwise.
double tb_sigmoid_exponent(double value, double mean, const ScheduleConfig& cfg);

/// eta_t * 10^phi.
double tb_sigmoid_lr(double value, double mean, double eta_t, const ScheduleConfig& cfg);

/// Min-max maps each value onto [eta_t (1 - s), eta_t (1 + s)] preserving
/// input order. A zero spread or s = 0 gives every entry eta_t.
std::vector<std::pair<std::string, double>> tb_linear_map_lr(
    const std::vector<std::pair<std::string, double>>& values, double eta_t, double s);

struct LrAssignment {
  std::map<std::string, double> per_layer;
  std::int64_t step = 0;
  double base_lr = 0.0;
};

/// Layer name -> block id, for layers that belong to a block.
using BlockMap = std::map<std::string, std::string>;

double metric_value(const EsdMetrics& m, Metric metric) noexcept;

/// Multiplicative factor per layer relative to eta_t: 10^phi for Sigmoid, the
/// linear-map factor for LinearMap, and exactly 1 for Off and for every name in
/// `unanalyzed`. Throws MissingBlockId under PerBlock when an analyzed layer
/// has no block.
std::map<std::string, double> layer_lr_factors(const std::vector<EsdMetrics>& metrics,
                                               const BlockMap& blocks, const ScheduleConfig& cfg,
                                               const std::vector<std::string>& unanalyzed = {});

/// eta_t times layer_lr_factors.
LrAssignment assign_lrs(const std::vector<EsdMetrics>& metrics, const BlockMap& blocks,
                        const ScheduleConfig& cfg, double eta_t, std::int64_t step = 0,
                        const std::vector<std::string>& unanalyzed = {});

/// Closed interval every assigned lr must fall in.
struct LrBounds {
  double lo;
  double hi;
};
LrBounds lr_bounds(const ScheduleConfig& cfg, double eta_t) noexcept;

bool within_bounds(const LrAssignment& assignment, const ScheduleConfig& cfg) noexcept;

std::string_view to_string(ScheduleFunction f) noexcept;
std::string_view to_string(Metric m) noexcept;
std::string_view to_string(Granularity g) noexcept;
std::string_view to_string(MetricDirection d) noexcept;
std::optional<ScheduleFunction> parse_function(std::string_view s) noexcept;
std::optional<Metric> parse_metric(std::string_view s) noexcept;
std::optional<Granularity> parse_granularity(std::string_view s) noexcept;
std::optional<MetricDirection> parse_direction(std::string_view s) noexcept;

}  // namespace htsr
