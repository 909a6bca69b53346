#pragma once

// Model-level aggregation of per-layer ESD metrics and cross-checkpoint trends.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "htsr/scheduler.hpp"
#include "htsr/spectral.hpp"

namespace htsr {

/// A layer whose spectrum is too flat for a Hill fit is kept in per_layer with
/// alpha_hill = NaN and k_used = 0 ("unfitted"); its norm metrics stay valid.
/// Unfitted layers are left out of the alpha summaries, which are NaN when no
/// layer could be fitted.
struct ModelReport {
  std::string checkpoint_id;
  std::vector<EsdMetrics> per_layer;
  BlockMap blocks;                     // layer -> block for analyzed layers that have one
  std::vector<std::string> skipped;    // layers below the eligibility threshold
  double alpha_mean = 0.0;
  double alpha_std = 0.0;              // population STD
  Granularity granularity = Granularity::PerLayer;
  std::optional<std::map<std::string, double>> block_summaries;  // block -> mean alpha
};

/// Population mean and STD. A constant input yields exactly (value, 0).
struct MeanStd {
  double mean;
  double std;
};
MeanStd population_mean_std(std::span<const double> xs);

/// PerLayer summarizes raw layer alphas. PerBlock first averages within each
/// block, then summarizes the block means; a layer with no block id forms a
/// singleton block keyed by its own name. Throws EmptyInput.
ModelReport build_report(const std::vector<EsdMetrics>& metrics, const BlockMap& blocks,
                         Granularity granularity, std::string checkpoint_id = {});

/// Names of per_layer entries with no Hill fit, in report order.
std::vector<std::string> unfitted_layers(const ModelReport& report);

/// NaN values are written as JSON null.
nlohmann::json to_json(const ModelReport& report);
ModelReport report_from_json(const nlohmann::json& j);

/// Columns: layer,block_id,alpha_hill,k_used,spectral_norm,stable_rank.
std::string report_csv(const ModelReport& report);

struct TrendPoint {
  std::string label;
  double alpha_std = 0.0;
  std::optional<double> quality;
};

struct TrendReport {
  std::vector<TrendPoint> series;
};

struct TrendEntry {
  std::string label;
  ModelReport report;
  std::optional<double> quality;
};

/// Keeps input order. Throws EmptyInput for fewer than two entries and
/// DuplicateLabel for a repeated label.
TrendReport build_trend(const std::vector<TrendEntry>& entries);
TrendReport build_trend(const std::vector<TrendPoint>& points);

nlohmann::json to_json(const TrendReport& trend);

/// Plot data with columns label,alpha_std,quality (quality blank when absent).
std::string trend_csv(const TrendReport& trend);

/// Shortest round-trip decimal form used for every number in CSV output.
std::string format_double(double v);

}  // namespace htsr
