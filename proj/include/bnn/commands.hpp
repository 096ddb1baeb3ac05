#pragma once

// Subcommand implementations behind the command-line tool. Each returns the
// process exit code on success paths and throws bnn::Error otherwise.

#include <cstdint>
#include <string>
#include <vector>

#include "bnn/config.hpp"

namespace bnn {

// Config from a file (if given) or a preset, then the overrides in order.
CmimConfig resolve_config(const std::string& config_path, const std::string& preset,
                          const std::vector<std::string>& overrides);

struct TrainOptions {
  CmimConfig config;
  bool resume = false;  // continue from <out_dir>/checkpoint.bnnc when present
  bool force = false;   // accept a checkpoint written under another config hash
  bool quiet = false;
};
int cmd_train(const TrainOptions& options);

struct EvalOptions {
  std::string checkpoint;
  std::string data_dir;  // empty: the directory recorded in the checkpoint config
};
// Prints one JSON object with the top-1 accuracy.
int cmd_eval(const EvalOptions& options);

struct SweepOptions {
  CmimConfig config;
  std::string param;                // lambda or n_nce
  std::vector<std::string> values;
  std::uint64_t seed_stride = 1;    // cell i trains with seed + i * seed_stride
  std::size_t jobs = 1;             // >1 runs cells as parallel subprocesses
  std::string executable;           // this program, for subprocess cells
};
// Writes <out_dir>/sweep.csv; failed cells are recorded and the sweep goes on.
int cmd_sweep(const SweepOptions& options);

struct AnalyzeOptions {
  std::string checkpoint;    // trained model, or
  std::string config_path;   // untrained network built from this config
  std::vector<std::string> overrides;
  std::string data_dir;
  std::string out_dir;
  std::size_t max_samples = 512;
};
int cmd_analyze(const AnalyzeOptions& options);

struct SynthOptions {
  std::string out_dir;
  std::size_t n_train = 10000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 20240601;
};
int cmd_synth(const SynthOptions& options);

// {"error": "<category>", "message": "..."} for stderr.
std::string error_json(std::string_view category, const std::string& message);

}  // namespace bnn
