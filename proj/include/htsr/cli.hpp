#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "htsr/error.hpp"
#include "htsr/scheduler.hpp"

namespace htsr::cli {

/// Documented process exit statuses.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kCheckpoint = 2,  // manifest, tensor file or LoRA pairing problem
  kSpectral = 3,    // a layer's spectrum could not be fitted
  kMissingBlock = 4,
};

int exit_code_for(ErrorCode code) noexcept;

struct TrainDemoOptions {
  std::filesystem::path output;
  std::vector<double> ratios{1.0, 0.1, 0.01};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int epochs = 200;
  std::size_t batch_size = 32;
  std::size_t pool_size = 1000;
  std::size_t test_size = 500;
  std::vector<std::size_t> layer_dims{16, 32, 32, 1};
  ScheduleConfig schedule;  // TempBalance arm; the baseline arm uses the same base schedule
  double k_ratio = 0.5;
};

/// Runs baseline and TempBalance for every (ratio, seed) and writes
///   runs/<arm>_ratio-<r>_seed-<s>.{json,csv}
///   comparison.{json,csv}, trend.json, trend_<arm>.csv
/// into options.output. A diverged run is recorded and the sweep continues.
void run_train_demo(const TrainDemoOptions& options, std::ostream& log);

/// Entry point shared by the executable and the tests. argv[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace htsr::cli
