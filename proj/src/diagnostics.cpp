#include "htsr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "htsr/error.hpp"

namespace htsr {

using nlohmann::json;

MeanStd population_mean_std(std::span<const double> xs) {
  if (xs.empty()) throw Error(ErrorCode::EmptyInput, "cannot summarize an empty set of alphas");
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
    return {xs.front(), 0.0};
  }
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size()))};
}

ModelReport build_report(const std::vector<EsdMetrics>& metrics, const BlockMap& blocks,
                         Granularity granularity, std::string checkpoint_id) {
  if (metrics.empty()) throw Error(ErrorCode::EmptyInput, "report needs at least one layer");
  ModelReport r;
  r.checkpoint_id = std::move(checkpoint_id);
  r.per_layer = metrics;
  r.granularity = granularity;
  for (const auto& m : metrics) {
    if (auto it = blocks.find(m.layer_name); it != blocks.end()) r.blocks.emplace(*it);
  }

  std::vector<EsdMetrics> fitted;
  for (const auto& m : metrics) {
    if (std::isfinite(m.alpha_hill)) fitted.push_back(m);
  }
  std::vector<double> summarized;
  if (granularity == Granularity::PerLayer) {
    for (const auto& m : fitted) summarized.push_back(m.alpha_hill);
  } else {
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> grouped;
    for (const auto& m : fitted) {
      auto it = blocks.find(m.layer_name);
      const std::string& key = it != blocks.end() ? it->second : m.layer_name;
      if (!grouped.contains(key)) order.push_back(key);
      grouped[key].push_back(m.alpha_hill);
    }
    std::map<std::string, double> summaries;
    for (const auto& key : order) {
      const double mean = population_mean_std(grouped[key]).mean;
      summaries[key] = mean;
      summarized.push_back(mean);
    }
    r.block_summaries = std::move(summaries);
  }
  if (summarized.empty()) {
    r.alpha_mean = std::numeric_limits<double>::quiet_NaN();
    r.alpha_std = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const MeanStd ms = population_mean_std(summarized);
  r.alpha_mean = ms.mean;
  r.alpha_std = ms.std;
  return r;
}

namespace {

// JSON has no NaN; unfitted values are written as null and read back as NaN.
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : ""; }

}  // namespace

std::vector<std::string> unfitted_layers(const ModelReport& report) {
  std::vector<std::string> out;
  for (const auto& m : report.per_layer) {
    if (!std::isfinite(m.alpha_hill)) out.push_back(m.layer_name);
  }
  return out;
}

json to_json(const ModelReport& report) {
  json layers = json::array();
  for (const auto& m : report.per_layer) {
    json item = {{"name", m.layer_name},
                 {"alpha_hill", number_or_null(m.alpha_hill)},
                 {"k_used", m.k_used},
                 {"spectral_norm", m.spectral_norm},
                 {"stable_rank", m.stable_rank}};
    if (auto it = report.blocks.find(m.layer_name); it != report.blocks.end()) {
      item["block_id"] = it->second;
    }
    layers.push_back(std::move(item));
  }
  json j = {{"checkpoint_id", report.checkpoint_id},
            {"granularity", std::string(to_string(report.granularity))},
            {"alpha_mean", number_or_null(report.alpha_mean)},
            {"alpha_std", number_or_null(report.alpha_std)},
            {"layers", std::move(layers)},
            {"skipped", report.skipped},
            {"unfitted", unfitted_layers(report)}};
  if (report.block_summaries) j["block_summaries"] = *report.block_summaries;
  return j;
}

ModelReport report_from_json(const json& j) {
  try {
    ModelReport r;
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    const auto g = parse_granularity(j.at("granularity").get<std::string>());
    if (!g) throw Error(ErrorCode::InvalidArgument, "unknown granularity in report");
    r.granularity = *g;
    r.alpha_mean = number_or_nan(j.at("alpha_mean"));
    r.alpha_std = number_or_nan(j.at("alpha_std"));
    for (const auto& item : j.at("layers")) {
      EsdMetrics m;
      m.layer_name = item.at("name").get<std::string>();
      m.alpha_hill = number_or_nan(item.at("alpha_hill"));
      m.k_used = item.at("k_used").get<std::size_t>();
      m.spectral_norm = item.at("spectral_norm").get<double>();
      m.stable_rank = item.at("stable_rank").get<double>();
      if (item.contains("block_id")) r.blocks[m.layer_name] = item.at("block_id").get<std::string>();
      r.per_layer.push_back(std::move(m));
    }
    if (j.contains("skipped")) r.skipped = j.at("skipped").get<std::vector<std::string>>();
    if (j.contains("block_summaries")) {
      r.block_summaries = j.at("block_summaries").get<std::map<std::string, double>>();
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed report JSON: ") + e.what());
  }
}

std::string format_double(double v) {
  // nlohmann emits the shortest representation that parses back exactly.
  return json(v).dump();
}

std::string report_csv(const ModelReport& report) {
  std::ostringstream out;
  out << "layer,block_id,alpha_hill,k_used,spectral_norm,stable_rank\n";
  for (const auto& m : report.per_layer) {
    auto it = report.blocks.find(m.layer_name);
    out << m.layer_name << ',' << (it != report.blocks.end() ? it->second : "") << ','
        << csv_number(m.alpha_hill) << ',' << m.k_used << ',' << format_double(m.spectral_norm)
        << ',' << format_double(m.stable_rank) << '\n';
  }
  return out.str();
}

TrendReport build_trend(const std::vector<TrendPoint>& points) {
  if (points.size() < 2) throw Error(ErrorCode::EmptyInput, "a trend needs at least two entries");
  std::set<std::string> seen;
  for (const auto& p : points) {
    if (!seen.insert(p.label).second) {
      throw Error(ErrorCode::DuplicateLabel, "label '" + p.label + "' appears twice");
    }
  }
  return {points};
}

TrendReport build_trend(const std::vector<TrendEntry>& entries) {
  std::vector<TrendPoint> points;
  points.reserve(entries.size());
  for (const auto& e : entries) points.push_back({e.label, e.report.alpha_std, e.quality});
  return build_trend(points);
}

json to_json(const TrendReport& trend) {
  json series = json::array();
  for (const auto& p : trend.series) {
    series.push_back({{"label", p.label},
                      {"alpha_std", p.alpha_std},
                      {"quality", p.quality ? json(*p.quality) : json(nullptr)}});
  }
  return {{"series", std::move(series)}};
}

std::string trend_csv(const TrendReport& trend) {
  std::ostringstream out;
  out << "label,alpha_std,quality\n";
  for (const auto& p : trend.series) {
    out << p.label << ',' << format_double(p.alpha_std) << ','
        << (p.quality ? format_double(*p.quality) : "") << '\n';
  }
  return out.str();
}

}  // namespace htsr
