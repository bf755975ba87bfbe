#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fixclr/metrics.hpp"

namespace fixclr::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitIo = 5,
};

// Environment variable that, when set, prefixes relative output paths.
inline constexpr const char* kOutputRootEnv = "FIXCLR_OUTPUT_ROOT";

std::filesystem::path resolve_output_path(const std::filesystem::path& p);

struct GenerateOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  bool overwrite = false;
};

void cmd_generate_data(const GenerateOptions& opt, std::ostream& log);

struct TrainOptions {
  std::filesystem::path config;
  std::string target = "all";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::string> out;
  bool overwrite = false;
  bool resume = false;
  int stop_after_epoch = 0;  // > 0: stop early; checkpoints allow --resume
  bool quiet = false;
};

// Returns the run directory.
std::filesystem::path cmd_train(const TrainOptions& opt, std::ostream& log);

struct SweepOptions {
  std::filesystem::path config;
  std::optional<std::string> out;
  bool overwrite = false;
  int jobs = 1;
};

metrics::Report cmd_sweep(const SweepOptions& opt, std::ostream& log);

struct ExportOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::vector<int> domains;  // empty: every sample
  double threshold = 0.95;
  bool overwrite = false;
};

metrics::EmbeddingDump cmd_export_embeddings(const ExportOptions& opt, std::ostream& log);

// Reads one run directory (metadata.json + target_*/metrics.csv).
metrics::RunSummary load_run_summary(const std::filesystem::path& run_dir);

metrics::Report cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                           const std::optional<std::filesystem::path>& out_csv,
                           std::ostream& log);

// Full command line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fixclr::cli
