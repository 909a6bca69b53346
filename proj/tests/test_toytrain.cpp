#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "htsr/error.hpp"
#include "htsr/toytrain.hpp"
#include "oracles.hpp"

using namespace htsr;

namespace {

void check_gradients(const MlpModel& model, const Dataset& data, Loss loss) {
  CHECK(oracle::max_gradient_rel_error(model, data, loss) < 1e-4);
}

TrainConfig quick_config(std::uint64_t seed, ScheduleFunction f, double s = 1.0) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.epochs = 12;
  cfg.batch_size = 16;
  cfg.schedule.base = {StepDecay{0.5, 5}, 0.05};
  cfg.schedule.function = f;
  cfg.schedule.s_above = s;
  cfg.schedule.s_below = s;
  cfg.schedule.granularity = Granularity::PerLayer;
  return cfg;
}

bool same_history(const RunHistory& a, const RunHistory& b) {
  if (a.per_epoch.size() != b.per_epoch.size() || a.diverged != b.diverged) return false;
  for (std::size_t i = 0; i < a.per_epoch.size(); ++i) {
    const auto& x = a.per_epoch[i];
    const auto& y = b.per_epoch[i];
    if (x.train_loss != y.train_loss || x.test_loss != y.test_loss) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("datasets are deterministic in (spec, seed)") {
  for (auto kind : {DatasetKind::TeacherStudent, DatasetKind::TwoClassBlobs}) {
    DatasetSpec spec;
    spec.kind = kind;
    spec.n = 64;
    const auto a = make_dataset(spec, 5);
    const auto b = make_dataset(spec, 5);
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    CHECK(make_dataset(spec, 6).inputs != a.inputs);
    CHECK(a.size() == 64);
  }
  DatasetSpec tiny;
  tiny.n = 1;
  CHECK_THROWS_AS(make_dataset(tiny, 1), Error);
}

TEST_CASE("two-class blobs are balanced") {
  DatasetSpec spec;
  spec.kind = DatasetKind::TwoClassBlobs;
  spec.n = 100;
  const auto d = make_dataset(spec, 3);
  CHECK(std::count(d.targets.begin(), d.targets.end(), 1.0) == 50);
  CHECK(std::count(d.targets.begin(), d.targets.end(), 0.0) == 50);
}

TEST_CASE("noise-free teacher labels are reproduced by the teacher") {
  DatasetSpec spec;
  spec.n = 20;
  spec.noise_sigma = 0.0;
  const auto d = make_dataset(spec, 9);
  CHECK(teacher_predict(spec, d.inputs) == d.targets);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::span<const double> x(d.inputs.data() + i * d.input_dim, d.input_dim);
    CHECK(teacher_predict(spec, x)[0] == doctest::Approx(d.targets[i]).epsilon(1e-14));
  }
}

TEST_CASE("subsample sizes, order and nesting") {
  DatasetSpec spec;
  spec.n = 1000;
  const auto d = make_dataset(spec, 1);
  const auto full = subsample(d, 1.0, 42);
  CHECK(full.inputs == d.inputs);
  CHECK(full.targets == d.targets);
  CHECK(subsample(d, 0.1, 42).size() == 100);
  CHECK(subsample(d, 1e-9, 42).size() == 1);
  CHECK_THROWS_AS(subsample(d, 0.0, 1), Error);
  CHECK_THROWS_AS(subsample(d, 1.5, 1), Error);

  // Targets are distinct reals, so they identify rows.
  auto rows_of = [](const Dataset& s) { return std::set<double>(s.targets.begin(), s.targets.end()); };
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto big = rows_of(subsample(d, 0.5, seed));
    const auto mid = rows_of(subsample(d, 0.1, seed));
    const auto small = rows_of(subsample(d, 0.01, seed));
    CHECK(std::includes(big.begin(), big.end(), mid.begin(), mid.end()));
    CHECK(std::includes(mid.begin(), mid.end(), small.begin(), small.end()));
  }
}

TEST_CASE("backprop matches central finite differences") {
  DatasetSpec spec;
  spec.n = 6;
  spec.input_dim = 4;
  const auto reg = make_dataset(spec, 2);
  check_gradients(make_mlp({4, 6, 1}, Activation::Tanh, 1), reg, Loss::MSE);
  check_gradients(make_mlp({4, 5, 7, 1}, Activation::Tanh, 2), reg, Loss::MSE);

  spec.kind = DatasetKind::TwoClassBlobs;
  const auto cls = make_dataset(spec, 3);
  check_gradients(make_mlp({4, 6, 1}, Activation::Tanh, 4), cls, Loss::CrossEntropy);

  // Softmax cross-entropy with one-hot targets.
  Dataset multi;
  multi.input_dim = 4;
  multi.output_dim = 3;
  multi.inputs = reg.inputs;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) multi.targets.push_back(c == i % 3 ? 1.0 : 0.0);
  }
  check_gradients(make_mlp({4, 6, 3}, Activation::Tanh, 5), multi, Loss::CrossEntropy);
  check_gradients(make_mlp({4, 8, 3}, Activation::ReLU, 6), multi, Loss::MSE);
}

TEST_CASE("training is deterministic and zero s reproduces the baseline bit-exactly") {
  DatasetSpec spec;
  spec.n = 200;
  const auto pool = make_dataset(spec, 1);
  spec.n = 100;
  const auto test = make_dataset(spec, 2);

  auto run = [&](const TrainConfig& cfg) {
    MlpModel m = make_mlp({16, 32, 32, 1}, Activation::Tanh, cfg.seed);
    auto h = train(m, pool, test, cfg);
    return std::pair{h, m};
  };
  const auto [base, base_model] = run(quick_config(3, ScheduleFunction::Off));
  const auto [zero, zero_model] = run(quick_config(3, ScheduleFunction::Sigmoid, 0.0));
  CHECK(same_history(base, zero));
  for (std::size_t l = 0; l < base_model.weights.size(); ++l) {
    CHECK(base_model.weights[l].values == zero_model.weights[l].values);
  }
  const auto [tb1, m1] = run(quick_config(3, ScheduleFunction::Sigmoid, 1.0));
  const auto [tb2, m2] = run(quick_config(3, ScheduleFunction::Sigmoid, 1.0));
  CHECK(same_history(tb1, tb2));
  CHECK(to_json(tb1).dump() == to_json(tb2).dump());
  CHECK_FALSE(same_history(tb1, base));
}

TEST_CASE("training reduces loss and records bounded lrs") {
  DatasetSpec spec;
  spec.n = 300;
  const auto pool = make_dataset(spec, 11);
  spec.n = 200;
  const auto test = make_dataset(spec, 12);
  auto cfg = quick_config(5, ScheduleFunction::Sigmoid, 2.0);
  cfg.schedule.s_below = 1.0;
  MlpModel m = make_mlp({16, 32, 32, 1}, Activation::Tanh, 5);
  const double before = evaluate_loss(m, test, Loss::MSE);
  const auto h = train(m, pool, test, cfg);
  REQUIRE(h.per_epoch.size() == 12);
  CHECK_FALSE(h.diverged);
  CHECK(h.per_epoch.back().test_loss < before);
  for (const auto& e : h.per_epoch) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.alpha_std));
    const double eta = base_lr(cfg.schedule.base, 0, e.epoch);
    LrAssignment a{e.per_layer_lrs, 0, eta};
    CHECK(within_bounds(a, cfg.schedule));
    CHECK(e.per_layer_lrs.at("fc2") == eta);  // 1 x 32 output layer is not analyzed
    CHECK(e.per_layer_lrs.size() == 3);
  }
}

TEST_CASE("linear warmup base schedule drives the trainer") {
  DatasetSpec spec;
  spec.n = 64;
  const auto pool = make_dataset(spec, 1);
  auto cfg = quick_config(1, ScheduleFunction::Sigmoid);
  cfg.epochs = 4;
  cfg.schedule.base = {LinearWarmupDecay{0.25, 16}, 0.05};  // 4 steps per epoch
  MlpModel m = make_mlp({16, 32, 32, 1}, Activation::Tanh, 1);
  const auto h = train(m, pool, pool, cfg);
  CHECK(h.per_epoch.size() == 4);
  CHECK(h.per_epoch[0].per_layer_lrs.at("fc2") == 0.0);
  cfg.epochs = 5;  // runs past total_steps
  MlpModel m2 = make_mlp({16, 32, 32, 1}, Activation::Tanh, 1);
  CHECK_THROWS_AS(train(m2, pool, pool, cfg), Error);
}

TEST_CASE("divergence truncates and flags the history") {
  DatasetSpec spec;
  spec.n = 64;
  const auto pool = make_dataset(spec, 1);
  auto cfg = quick_config(1, ScheduleFunction::Off);
  cfg.schedule.base = {ConstantLr{}, 1e6};
  cfg.epochs = 50;
  MlpModel m = make_mlp({16, 32, 32, 1}, Activation::ReLU, 1);
  const auto h = train(m, pool, pool, cfg);
  CHECK(h.diverged);
  CHECK(h.per_epoch.size() < 50);
  for (const auto& e : h.per_epoch) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.test_loss));
  }
}

TEST_CASE("history CSV lists one row per epoch") {
  RunHistory h;
  h.per_epoch.push_back({0, 1.5, 2.0, 0.25, {{"fc0", 0.1}, {"fc1", 0.2}}});
  CHECK(history_csv(h) == "epoch,train_loss,test_loss,alpha_std,lr[fc0],lr[fc1]\n0,1.5,2.0,0.25,0.1,0.2\n");
}

TEST_CASE("invalid trainer inputs") {
  CHECK_THROWS_AS(make_mlp({16}, Activation::Tanh, 1), Error);
  CHECK_THROWS_AS(make_mlp({16, 0, 1}, Activation::Tanh, 1), Error);
  DatasetSpec spec;
  spec.n = 10;
  const auto d = make_dataset(spec, 1);
  MlpModel wrong = make_mlp({8, 4, 1}, Activation::Tanh, 1);
  CHECK_THROWS_AS(evaluate_loss(wrong, d, Loss::MSE), Error);
}
