#include <doctest.h>

#include <cmath>
#include <random>

#include "htsr/diagnostics.hpp"
#include "htsr/error.hpp"

using namespace htsr;

namespace {

std::vector<EsdMetrics> with_alphas(const std::vector<double>& alphas) {
  std::vector<EsdMetrics> out;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    out.push_back({"l" + std::to_string(i), alphas[i], 4, 2.5 + i, 1.5});
  }
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an htsr::Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("per-layer mean and population STD") {
  const auto r = build_report(with_alphas({2, 4, 6}), {}, Granularity::PerLayer, "ck");
  CHECK(r.alpha_mean == 4.0);
  CHECK(std::abs(r.alpha_std - std::sqrt(8.0 / 3.0)) < 1e-12);
  CHECK(std::abs(r.alpha_std - 1.6329931618554521) < 1e-12);
  CHECK_FALSE(r.block_summaries.has_value());
  CHECK(r.checkpoint_id == "ck");
}

TEST_CASE("constant alphas give STD exactly zero") {
  for (double v : {3.5, 0.1, 2.0 / 3.0, 1e-7}) {
    const auto r = build_report(with_alphas(std::vector<double>(7, v)), {}, Granularity::PerLayer);
    CHECK(r.alpha_std == 0.0);
    CHECK(r.alpha_mean == v);
  }
}

TEST_CASE("per-block averages within blocks before summarizing") {
  const BlockMap blocks{{"l0", "a"}, {"l1", "a"}, {"l2", "b"}, {"l3", "b"}};
  const auto r = build_report(with_alphas({2, 4, 6, 8}), blocks, Granularity::PerBlock);
  REQUIRE(r.block_summaries.has_value());
  CHECK(r.block_summaries->at("a") == 3.0);
  CHECK(r.block_summaries->at("b") == 7.0);
  CHECK(r.alpha_mean == 5.0);
  CHECK(r.alpha_std == 2.0);
}

TEST_CASE("per-block over singleton blocks equals per-layer") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(1.5, 7.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> alphas(2 + gen() % 20);
    for (double& a : alphas) a = u(gen);
    const auto ms = with_alphas(alphas);
    BlockMap singletons;
    for (const auto& m : ms) singletons[m.layer_name] = "blk_" + m.layer_name;
    const auto per_layer = build_report(ms, {}, Granularity::PerLayer);
    CHECK(build_report(ms, singletons, Granularity::PerBlock).alpha_std == per_layer.alpha_std);
    // Layers without a block id are their own block.
    CHECK(build_report(ms, {}, Granularity::PerBlock).alpha_std == per_layer.alpha_std);
  }
}

TEST_CASE("STD is translation invariant and scales linearly") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(1.5, 7.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> alphas(3 + gen() % 10);
    for (double& a : alphas) a = u(gen);
    const double base = population_mean_std(alphas).std;
    std::vector<double> shifted(alphas), scaled(alphas);
    for (double& a : shifted) a += 10.0;
    for (double& a : scaled) a *= 3.0;
    CHECK(population_mean_std(shifted).std == doctest::Approx(base).epsilon(1e-12));
    CHECK(population_mean_std(scaled).std == doctest::Approx(3.0 * base).epsilon(1e-12));
  }
}

TEST_CASE("empty input is rejected") {
  CHECK(code_of([] { build_report({}, {}, Granularity::PerLayer); }) == ErrorCode::EmptyInput);
}

TEST_CASE("report JSON round-trips to the same canonical form") {
  const BlockMap blocks{{"l0", "a"}, {"l1", "a"}, {"l2", "b"}};
  auto r = build_report(with_alphas({2.123456789012345, 4.1, 6.000000000000001}), blocks,
                        Granularity::PerBlock, "ckpt-7");
  r.skipped = {"bias0", "norm"};
  const auto j = to_json(r);
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.per_layer[0].alpha_hill == r.per_layer[0].alpha_hill);
  CHECK(back.alpha_std == r.alpha_std);
  CHECK(back.skipped == r.skipped);
}

TEST_CASE("report CSV has one row per layer") {
  const auto r = build_report(with_alphas({2, 3}), {{"l0", "blk"}}, Granularity::PerLayer);
  CHECK(report_csv(r) ==
        "layer,block_id,alpha_hill,k_used,spectral_norm,stable_rank\n"
        "l0,blk,2.0,4,2.5,1.5\n"
        "l1,,3.0,4,3.5,1.5\n");
}

TEST_CASE("trend preserves input order and values") {
  const auto r1 = build_report(with_alphas({2, 2.2}), {}, Granularity::PerLayer);
  const auto r2 = build_report(with_alphas({2, 2.6}), {}, Granularity::PerLayer);
  const auto t = build_trend(std::vector<TrendEntry>{{"100%", r1, 0.9}, {"10%", r2, std::nullopt}});
  REQUIRE(t.series.size() == 2);
  CHECK(t.series[0].label == "100%");
  CHECK(t.series[0].alpha_std == r1.alpha_std);
  CHECK(t.series[0].quality == std::optional<double>(0.9));
  CHECK(t.series[1].label == "10%");
  CHECK_FALSE(t.series[1].quality.has_value());
  CHECK(trend_csv(t) == "label,alpha_std,quality\n100%," + format_double(r1.alpha_std) + ",0.9\n10%," +
                            format_double(r2.alpha_std) + ",\n");
}

TEST_CASE("identical report under two labels gives two equal points") {
  const auto r = build_report(with_alphas({2, 5}), {}, Granularity::PerLayer);
  const auto t = build_trend(std::vector<TrendEntry>{{"a", r, {}}, {"b", r, {}}});
  CHECK(t.series[0].alpha_std == t.series[1].alpha_std);
}

TEST_CASE("trend errors") {
  const auto r = build_report(with_alphas({2, 5}), {}, Granularity::PerLayer);
  CHECK(code_of([&] { build_trend(std::vector<TrendEntry>{{"x", r, {}}, {"x", r, {}}}); }) ==
        ErrorCode::DuplicateLabel);
  CHECK(code_of([&] { build_trend(std::vector<TrendEntry>{{"x", r, {}}}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("format_double is the shortest round-trip form") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1.0");
  const double v = 1.0 / 3.0;
  CHECK(std::stod(format_double(v)) == v);
}
