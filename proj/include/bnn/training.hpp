#pragma once

// SGD with momentum on the latent weights, cosine schedule, the epoch loop
// with memory-bank upkeep, evaluation and checkpoint/resume.

#include <memory>
#include <string>
#include <vector>

#include "bnn/config.hpp"
#include "bnn/data.hpp"
#include "bnn/network.hpp"

namespace bnn {

// True when this build links the contrastive objective.
bool cmim_enabled();

template <class T>
struct OptimizerState {
  std::vector<LayerGrads<T>> velocity;  // mirrors Gradients layout
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t steps = 0;
};

template <class T>
OptimizerState<T> make_optimizer(const Network<T>& net, double momentum, double weight_decay);

// v <- momentum * v + g + wd * w ; w <- w - lr * v. BN parameters get no
// weight decay. Throws a numeric error naming the tensor on a non-finite
// gradient, and when any latent weight reaches magnitude 100.
template <class T>
void sgd_step(Network<T>& net, const Gradients<T>& grads, OptimizerState<T>& opt, double lr);

// lr0 * (1 + cos(pi * epoch / total)) / 2
double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0);

struct EvalResult {
  double accuracy = 0.0;  // percent
  double loss = 0.0;      // mean cross-entropy
  std::size_t correct = 0;
  std::size_t total = 0;
};

template <class T>
EvalResult evaluate(const Network<T>& net, const Dataset& data, std::size_t batch_size = 256);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double cls_loss = 0.0;
  double cmim_loss = 0.0;       // sum_k nce_k / beta^(K-1-k), before lambda
  std::vector<double> nce;      // per tapped layer
  std::vector<double> mi;       // per tapped layer, held-out diagnostic
  double mi_diag = 0.0;         // mean of mi
  double train_acc = 0.0;       // percent, train-mode forward
  double test_acc = 0.0;        // percent
  double seconds = 0.0;         // wall time; kept out of metrics.csv and checkpoints
};

std::string metrics_header(const std::vector<std::size_t>& tap_layers);
std::string metrics_row(const EpochMetrics& m);

// Held-out batch used for the MI and similarity diagnostics.
Batch diagnostic_batch(const Dataset& test, std::size_t max_samples);

class Trainer {
 public:
  Trainer(CmimConfig config, DataSplits data);
  ~Trainer();
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;

  const CmimConfig& config() const { return config_; }
  const DataSplits& data() const { return data_; }
  const Network<float>& network() const { return net_; }
  const std::vector<EpochMetrics>& history() const { return history_; }
  std::size_t epochs_done() const { return history_.size(); }
  bool finished() const { return epochs_done() >= config_.epochs; }

  EpochMetrics run_epoch();

  std::vector<std::uint8_t> checkpoint_bytes() const;
  void save_checkpoint(const std::string& path) const;
  // Rejects a checkpoint written under a different config hash unless forced.
  void restore(const std::vector<std::uint8_t>& bytes, bool force = false);
  void load_checkpoint(const std::string& path, bool force = false);

 private:
  struct Objective;  // memory banks and sampling state; empty in baseline builds

  CmimConfig config_;
  DataSplits data_;
  Network<float> net_;
  OptimizerState<float> opt_;
  Rng augment_rng_;
  std::unique_ptr<Objective> objective_;
  Batch diag_;
  std::vector<EpochMetrics> history_;
};

// Network and normalization recovered from a checkpoint for inference.
struct LoadedModel {
  CmimConfig config;
  Network<float> net;
  Normalization norm;
  std::size_t epochs_done = 0;
};
LoadedModel load_model(const std::string& checkpoint_path);

// Test split prepared as the training run prepared it.
Dataset load_test_split(const CmimConfig& config, const std::string& data_dir,
                        const Normalization& norm);

}  // namespace bnn
