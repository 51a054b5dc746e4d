#pragma once

// Command orchestration shared by the command-line tool and the tests.  Each
// command returns its report; run_command adds file output and maps failures
// to exit codes.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gedi/data.hpp"
#include "gedi/trainer.hpp"

namespace gedi {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr double kValidMaskRate = 0.1;
inline constexpr double kTrainFraction = 0.7;
inline constexpr double kValidFractionOfTrain = 0.2;

/// Exit codes of run_command.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

struct RunConfig {
  std::string command;  // impute | predict | ablate | gradcheck
  std::string data_path;
  std::string schema_path;
  /// > 0 replaces --data/--schema with the planted synthetic fixture.
  Index synthetic_rows = 0;
  double missing_rate = 0.2;
  std::uint64_t seed = 0;
  std::string mode;     // predict; empty = meta
  std::string variant = "gedi";
  // Training overrides; unset keeps the command's defaults.
  std::optional<int> epochs;
  std::optional<Index> batch_size;
  std::optional<double> epsilon;
  std::optional<double> lr;
  std::optional<double> meta_lr;
  std::optional<int> patience;
  bool pin_weights = false;
  // ablate
  std::vector<std::string> variants;  // empty = all three
  std::vector<std::string> modes;     // empty = impute
  int seeds = 1;
  // gradcheck
  bool faulty_relu = false;
  // outputs
  std::string out_path;
  std::string report_path;
  std::string checkpoint_path;
  /// Adds wall-clock seconds to the report (which then differs run to run).
  bool timing = false;
};

nlohmann::json to_json(const RunConfig& config);

/// Resolved training configuration for one impute or predict run.
TrainConfig resolve_train_config(const RunConfig& config);

struct LoadedData {
  RawTable table;
  TabularDataset data;
};
LoadedData load_run_data(const RunConfig& config);

/// M_test at the requested rate and M_valid at kValidMaskRate, from separate
/// substreams of the seed.
MaskSet make_run_masks(const TabularDataset& data, double missing_rate, std::uint64_t seed);

/// The dataset's own train indicator when present (validation carved from its
/// training rows), otherwise a seeded 70/30 split.
Split make_run_split(const TabularDataset& data, std::uint64_t seed);

struct CommandOutput {
  nlohmann::json report;
  std::optional<RawTable> completed;
  std::optional<ParamSet> checkpoint;
};

CommandOutput cmd_impute(const RunConfig& config);
CommandOutput cmd_predict(const RunConfig& config);
CommandOutput cmd_ablate(const RunConfig& config);
/// report["passed"] tells whether every check met its tolerance.
CommandOutput cmd_gradcheck(const RunConfig& config);

/// Sorted keys, two-space indent, trailing newline.
std::string format_report(const nlohmann::json& report);

/// Runs the command, writes the requested outputs and returns the exit code.
/// The report goes to `out` unless a report path is set; error messages go to
/// `err`.
int run_command(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace gedi
