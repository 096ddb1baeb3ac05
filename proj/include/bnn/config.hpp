#pragma once

// Run configuration: architecture, objective and optimizer hyperparameters,
// data location and bookkeeping. JSON in and out; unknown keys are rejected.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bnn/network.hpp"

namespace bnn {

struct CmimConfig {
  std::string preset = "desk";
  ArchSpec arch{"mlp", {784, 512, 512, 10}, {}, {}, 0};
  std::vector<std::size_t> tap_layers{1, 2};

  double lambda = 0.8;
  double beta = 2.0;
  double tau = 300.0;  // scores span roughly +-||a||_1, a few hundred at width 512
  std::size_t n_nce = 1024;
  std::size_t m_pairs = 0;  // 0: training-set size
  std::string warm_policy = "skip_cold";
  // "none": critic as written; "estimate": divide exp(s/tau) by a constant Z
  // fixed per layer from the first batch with a scored anchor.
  std::string critic_norm = "estimate";
  // Keep the contrastive gradient off the batch-norm gamma and shift.
  bool detach_affine = true;

  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  std::string data_dir = "data/mnist";
  std::string data_format = "idx";
  std::size_t train_per_class = 1000;  // 0: every sample
  std::size_t test_per_class = 0;
  bool augment = false;

  std::size_t mi_bins = 8;
  std::size_t diag_samples = 512;  // held-out samples for MI and similarity diagnostics

  // Runtime-only settings; excluded from the config hash.
  std::string out_dir = "runs/desk";
  std::size_t checkpoint_every = 5;
  std::size_t stop_after = 0;  // stop (resumably) after this many epochs; 0 runs to the end
  std::size_t threads = 0;

  void validate() const;
  friend bool operator==(const CmimConfig&, const CmimConfig&) = default;
};

// Named defaults: "desk" (binary MLP on MNIST-format data), "conv" (small
// binary conv net on CIFAR-format data), "smoke" (tiny and fast).
CmimConfig preset_config(const std::string& name);

std::string config_to_json(const CmimConfig& config, int indent = 2);
// Keys absent from the JSON keep the values of the named preset (or "desk").
CmimConfig config_from_json(const std::string& text);
CmimConfig load_config(const std::string& path);

// key=value with a dotted key path; the value is parsed as JSON when
// possible, else taken as a string.
void apply_override(CmimConfig& config, const std::string& assignment);
// All assignments in order, validated together at the end.
void apply_overrides(CmimConfig& config, std::span<const std::string> assignments);

// FNV-1a over the canonical JSON of everything that affects training results.
std::string config_hash(const CmimConfig& config);

}  // namespace bnn
