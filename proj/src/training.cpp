#include "bnn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <utility>

#include "bnn/checkpoint.hpp"
#include "bnn/classification.hpp"
#include "bnn/mi.hpp"

#ifndef BNN_WITH_CMIM
#define BNN_WITH_CMIM 1
#endif

#if BNN_WITH_CMIM
#include "bnn/cmim_loss.hpp"
#endif

namespace bnn {

bool cmim_enabled() { return BNN_WITH_CMIM != 0; }

// ----------------------------------------------------------------- optimizer

template <class T>
OptimizerState<T> make_optimizer(const Network<T>& net, double momentum, double weight_decay) {
  OptimizerState<T> opt;
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  for (const auto& layer : net.layers) {
    LayerGrads<T> v;
    v.weight = BasicTensor<T>(layer.w_latent.shape());
    v.gamma.assign(layer.bn.features(), T(0));
    v.beta_shift.assign(layer.bn.features(), T(0));
    opt.velocity.push_back(std::move(v));
  }
  return opt;
}

namespace {

template <class T>
void require_finite(std::span<const T> values, const std::string& name) {
  for (T v : values) {
    require(std::isfinite(v), ErrorKind::numeric, "non-finite gradient in " + name);
  }
}

template <class T>
void momentum_update(std::span<T> w, std::span<const T> g, std::span<T> v, double momentum,
                     double decay, double lr) {
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(decay), eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = mu * v[i] + g[i] + wd * w[i];
    w[i] -= eta * v[i];
  }
}

}  // namespace

template <class T>
void sgd_step(Network<T>& net, const Gradients<T>& grads, OptimizerState<T>& opt, double lr) {
  require(grads.layers.size() == net.layers.size() && opt.velocity.size() == net.layers.size(),
          ErrorKind::dimension, "gradient/optimizer layout does not match the network");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& g = grads.layers[l];
    const std::string prefix = "layer" + std::to_string(l + 1);
    require(g.weight.shape() == net.layers[l].w_latent.shape(), ErrorKind::dimension,
            prefix + ".weight gradient has shape " + shape_string(g.weight.shape()));
    require_finite(g.weight.data(), prefix + ".weight");
    require_finite(std::span<const T>(g.gamma), prefix + ".bn.gamma");
    require_finite(std::span<const T>(g.beta_shift), prefix + ".bn.beta_shift");
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const auto& g = grads.layers[l];
    auto& v = opt.velocity[l];
    momentum_update(layer.w_latent.data(), g.weight.data(), v.weight.data(), opt.momentum,
                    opt.weight_decay, lr);
    if (!g.gamma.empty()) {
      momentum_update(std::span<T>(layer.bn.gamma), std::span<const T>(g.gamma),
                      std::span<T>(v.gamma), opt.momentum, 0.0, lr);
      momentum_update(std::span<T>(layer.bn.beta_shift), std::span<const T>(g.beta_shift),
                      std::span<T>(v.beta_shift), opt.momentum, 0.0, lr);
    }
    T peak = 0;
    for (T w : layer.w_latent.data()) peak = std::max(peak, std::abs(w));
    require(std::isfinite(peak) && peak < T(100), ErrorKind::numeric,
            "layer" + std::to_string(l + 1) + ".weight diverged (max |w| = " +
                std::to_string(static_cast<double>(peak)) + ")");
  }
  ++opt.steps;
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0) {
  require(total_epochs > 0, ErrorKind::config, "cosine schedule needs total_epochs > 0");
  require(epoch <= total_epochs, ErrorKind::config, "epoch beyond the schedule");
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr0 * 0.5 * (1.0 + std::cos(phase));
}

// ---------------------------------------------------------------- evaluation

template <class T>
EvalResult evaluate(const Network<T>& net, const Dataset& data, std::size_t batch_size) {
  require(data.size() > 0, ErrorKind::data, "cannot evaluate on an empty dataset");
  EvalResult r;
  double loss = 0.0;
  BatchSampler sampler(data.size(), batch_size, false);
  for (const auto& idx : sampler.batches()) {
    Batch b = gather(data, idx);
    BasicTensor<T> x(b.x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(b.x[i]);
    auto out = forward(net, x);
    auto ce = softmax_cross_entropy(out.logits, b.labels);
    loss += ce.loss * static_cast<double>(idx.size());
    r.correct += ce.correct;
  }
  r.total = data.size();
  r.loss = loss / static_cast<double>(r.total);
  r.accuracy = 100.0 * static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

// ------------------------------------------------------------------- metrics

std::string metrics_header(const std::vector<std::size_t>& tap_layers) {
  std::string h = "epoch,lr,train_loss,cls_loss,cmim_loss";
  for (auto k : tap_layers) h += ",nce_" + std::to_string(k);
  for (auto k : tap_layers) h += ",mi_" + std::to_string(k);
  return h + ",mi_diag,train_acc,test_acc\n";
}

std::string metrics_row(const EpochMetrics& m) {
  char buf[64];
  std::string row = std::to_string(m.epoch);
  auto add = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    row += buf;
  };
  add(m.lr);
  add(m.train_loss);
  add(m.cls_loss);
  add(m.cmim_loss);
  for (double v : m.nce) add(v);
  for (double v : m.mi) add(v);
  add(m.mi_diag);
  add(m.train_acc);
  add(m.test_acc);
  return row + "\n";
}

Batch diagnostic_batch(const Dataset& test, std::size_t max_samples) {
  std::vector<std::size_t> idx(std::min(test.size(), max_samples));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather(test, idx);
}

// ------------------------------------------------------------------- trainer

namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStream = 1000;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kNceStream = 3;

std::vector<double> flatten(const EpochMetrics& m) {
  std::vector<double> v{static_cast<double>(m.epoch), m.lr, m.train_loss, m.cls_loss, m.cmim_loss};
  v.insert(v.end(), m.nce.begin(), m.nce.end());
  v.insert(v.end(), m.mi.begin(), m.mi.end());
  // Wall time stays out so checkpoints of identical runs are identical.
  v.insert(v.end(), {m.mi_diag, m.train_acc, m.test_acc});
  return v;
}

EpochMetrics unflatten(std::span<const double> v, std::size_t taps) {
  EpochMetrics m;
  std::size_t i = 0;
  m.epoch = static_cast<std::size_t>(v[i++]);
  m.lr = v[i++];
  m.train_loss = v[i++];
  m.cls_loss = v[i++];
  m.cmim_loss = v[i++];
  m.nce.assign(v.begin() + static_cast<std::ptrdiff_t>(i), v.begin() + static_cast<std::ptrdiff_t>(i + taps));
  i += taps;
  m.mi.assign(v.begin() + static_cast<std::ptrdiff_t>(i), v.begin() + static_cast<std::ptrdiff_t>(i + taps));
  i += taps;
  m.mi_diag = v[i++];
  m.train_acc = v[i++];
  m.test_acc = v[i++];
  return m;
}

std::string layer_name(std::size_t l) { return "layer" + std::to_string(l + 1); }

void write_network(CheckpointWriter& w, const Network<float>& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const std::string p = layer_name(l);
    w.add(p + ".weight", layer.w_latent.data(), layer.w_latent.shape());
    if (layer.has_bn) {
      const Shape s{layer.bn.features()};
      w.add(p + ".bn.gamma", std::span<const float>(layer.bn.gamma), s);
      w.add(p + ".bn.beta_shift", std::span<const float>(layer.bn.beta_shift), s);
      w.add(p + ".bn.running_mean", std::span<const float>(layer.bn.running_mean), s);
      w.add(p + ".bn.running_var", std::span<const float>(layer.bn.running_var), s);
    }
  }
}

void read_network(const CheckpointReader& r, Network<float>& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const std::string p = layer_name(l);
    layer.w_latent = FpTensor(layer.w_latent.shape(), r.f32(p + ".weight", layer.w_latent.shape()));
    require(layer.w_latent.all_finite(), ErrorKind::checkpoint, p + ".weight is not finite");
    if (layer.has_bn) {
      const Shape s{layer.bn.features()};
      layer.bn.gamma = r.f32(p + ".bn.gamma", s);
      layer.bn.beta_shift = r.f32(p + ".bn.beta_shift", s);
      layer.bn.running_mean = r.f32(p + ".bn.running_mean", s);
      layer.bn.running_var = r.f32(p + ".bn.running_var", s);
    }
  }
  net.refresh_binary_cache();
}

Dataset read_split_raw(const CmimConfig& config, const std::string& dir, bool train) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (parse_data_format(config.data_format) == DataFormat::idx) {
    const std::string stem = train ? "train" : "t10k";
    return read_idx((root / (stem + "-images-idx3-ubyte")).string(),
                    (root / (stem + "-labels-idx1-ubyte")).string());
  }
  if (train) {
    std::vector<std::string> files;
    for (int b = 1; b <= 5; ++b) files.push_back((root / ("data_batch_" + std::to_string(b) + ".bin")).string());
    return read_cifar_binary(files);
  }
  return read_cifar_binary({(root / "test_batch.bin").string()});
}

}  // namespace

struct Trainer::Objective {
#if BNN_WITH_CMIM
  std::vector<MemoryBank<float>> banks;
  ObjectiveConfig config;
  Rng rng;
  bool estimate_partition = false;
  std::vector<std::uint8_t> partition_set;  // per tap
  double log_m = 0.0;
#endif
};

Trainer::Trainer(CmimConfig config, DataSplits data)
    : config_(std::move(config)), data_(std::move(data)) {
  config_.validate();
  require(data_.train.size() >= config_.batch_size, ErrorKind::data,
          "training set has fewer samples than one batch");
  ArchSpec arch = config_.arch;
  if (arch.type == "mlp") {
    require(arch.widths.front() == data_.train.features(), ErrorKind::config,
            "arch input width " + std::to_string(arch.widths.front()) + " but samples have " +
                std::to_string(data_.train.features()) + " features");
  } else {
    require(shape_size(arch.input_shape) == data_.train.features(), ErrorKind::config,
            "arch input shape does not match the samples");
  }
  require(data_.train.n_classes <= (arch.type == "mlp" ? arch.widths.back() : arch.classes),
          ErrorKind::config, "network has fewer outputs than the dataset has classes");
  net_ = build_network<float>(arch, config_.tap_layers, derive_seed(config_.seed, kInitStream));
  opt_ = make_optimizer(net_, config_.momentum, config_.weight_decay);
  augment_rng_ = Rng(derive_seed(config_.seed, kAugmentStream));
  diag_ = diagnostic_batch(data_.test, config_.diag_samples);

  if (config_.lambda > 0.0) {
#if BNN_WITH_CMIM
    objective_ = std::make_unique<Objective>();
    const std::size_t slots = data_.train.size();
    require(config_.n_nce <= slots - 1, ErrorKind::config,
            "n_nce " + std::to_string(config_.n_nce) + " exceeds the " + std::to_string(slots - 1) +
                " negatives available per anchor");
    for (auto k : net_.tap_layers) {
      objective_->banks.emplace_back(slots, net_.layers[k - 1].bn_channels());
    }
    auto& oc = objective_->config;
    oc.lambda = config_.lambda;
    oc.beta = config_.beta;
    oc.critic.tau = config_.tau;
    oc.critic.n_negatives = config_.n_nce;
    oc.critic.m_pairs = config_.m_pairs ? config_.m_pairs : slots;
    oc.critic.validate();
    oc.policy = config_.warm_policy == "strict" ? WarmPolicy::strict : WarmPolicy::skip_cold;
    objective_->rng = Rng(derive_seed(config_.seed, kNceStream));
    objective_->estimate_partition = config_.critic_norm == "estimate";
    oc.detach_affine = config_.detach_affine;
    oc.log_partition.assign(net_.tap_layers.size(), 0.0);
    objective_->partition_set.assign(net_.tap_layers.size(), 0);
    objective_->log_m = std::log(static_cast<double>(oc.critic.m_pairs));
#else
    fail(ErrorKind::config, "this build has no contrastive objective; lambda must be 0");
#endif
  }
}

Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;

EpochMetrics Trainer::run_epoch() {
  require(!finished(), ErrorKind::config, "training already ran all epochs");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t e = history_.size();
  EpochMetrics m;
  m.epoch = e + 1;
  m.lr = cosine_lr(e, config_.epochs, config_.lr0);
  const std::size_t taps = net_.tap_layers.size();
  m.nce.assign(taps, 0.0);

  const Dataset& train = data_.train;
  const auto& shape = train.sample_shape;
  BatchSampler sampler(train.size(), config_.batch_size, true,
                       derive_seed(config_.seed, kShuffleStream + e));
  std::size_t correct = 0, seen = 0;
  for (std::size_t bi = 0; bi < sampler.size(); ++bi) {
    Batch batch = gather(train, sampler.batches()[bi]);
    if (config_.augment) {
      for (std::size_t r = 0; r < batch.x.rows(); ++r) {
        augment(batch.x.row(r), shape[0], shape[1], shape[2], augment_rng_);
      }
    }
    try {
      if (objective_) {
#if BNN_WITH_CMIM
        auto res = cmim_objective(net_, batch.x, batch.labels, batch.indices, objective_->banks,
                                  objective_->config, objective_->rng);
        for (std::size_t t = 0; t < taps; ++t) {
          objective_->banks[t].update(batch.indices, res.pooled[t]);
          m.nce[t] += res.report.nce[t];
          // Z = mean(exp(s/tau)) * M, taken from the first batch that scored anything.
          if (objective_->estimate_partition && !objective_->partition_set[t] &&
              res.active[t] > 0) {
            objective_->config.log_partition[t] = res.log_mean_exp[t] + objective_->log_m;
            objective_->partition_set[t] = 1;
          }
        }
        sgd_step(net_, res.grads, opt_, m.lr);
        m.train_loss += res.report.total;
        m.cls_loss += res.report.cls;
        m.cmim_loss += res.report.cmim;
        correct += res.correct;
#endif
      } else {
        auto res = classification_step(net_, batch.x, batch.labels);
        sgd_step(net_, res.grads, opt_, m.lr);
        m.train_loss += res.cls_loss;
        m.cls_loss += res.cls_loss;
        correct += res.correct;
      }
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::numeric) throw;
      fail(ErrorKind::numeric, "epoch " + std::to_string(e + 1) + " batch " +
                                   std::to_string(bi) + ": " + err.what());
    }
    seen += batch.labels.size();
  }
  const double n_batches = static_cast<double>(sampler.size());
  m.train_loss /= n_batches;
  m.cls_loss /= n_batches;
  m.cmim_loss /= n_batches;
  for (auto& v : m.nce) v /= n_batches;
  m.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(seen);
  m.test_acc = evaluate(std::as_const(net_), data_.test).accuracy;

  const auto diag = forward(std::as_const(net_), diag_.x);
  for (auto k : net_.tap_layers) {
    m.mi.push_back(binarized_activation_mi(diag.cache, k, config_.mi_bins));
    m.mi_diag += m.mi.back();
  }
  if (taps > 0) m.mi_diag /= static_cast<double>(taps);
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  history_.push_back(m);
  return m;
}

std::vector<std::uint8_t> Trainer::checkpoint_bytes() const {
  CheckpointWriter w;
  w.add_text("config", config_to_json(config_));
  w.add_text("config_hash", config_hash(config_));
  w.add_u64("epoch", history_.size());
  write_network(w, net_);
  for (std::size_t l = 0; l < net_.layers.size(); ++l) {
    const auto& v = opt_.velocity[l];
    const std::string p = "opt." + layer_name(l);
    w.add(p + ".weight", v.weight.data(), v.weight.shape());
    if (net_.layers[l].has_bn) {
      w.add(p + ".gamma", std::span<const float>(v.gamma), Shape{v.gamma.size()});
      w.add(p + ".beta_shift", std::span<const float>(v.beta_shift), Shape{v.beta_shift.size()});
    }
  }
  w.add_u64("opt.steps", opt_.steps);
  w.add_text("rng.augment", augment_rng_.state());
#if BNN_WITH_CMIM
  if (objective_) {
    w.add_text("rng.nce", objective_->rng.state());
    const auto& lp = objective_->config.log_partition;
    w.add("critic.log_partition", std::span<const double>(lp), Shape{lp.size()});
    w.add("critic.partition_set", std::span<const std::uint8_t>(objective_->partition_set),
          Shape{lp.size()});
    for (std::size_t t = 0; t < objective_->banks.size(); ++t) {
      const auto& bank = objective_->banks[t];
      const std::string p = "bank" + std::to_string(net_.tap_layers[t]);
      w.add(p + ".values", std::span<const float>(bank.values()), Shape{bank.slots(), bank.dim()});
      w.add(p + ".initialized", std::span<const std::uint8_t>(bank.init_flags()), Shape{bank.slots()});
    }
  }
#endif
  const Normalization& norm = data_.train.norm;
  w.add("norm.mean", std::span<const float>(norm.mean), Shape{norm.mean.size()});
  w.add("norm.std", std::span<const float>(norm.std), Shape{norm.std.size()});
  std::vector<double> hist;
  std::size_t width = 0;
  for (const auto& m : history_) {
    const auto row = flatten(m);
    width = row.size();
    hist.insert(hist.end(), row.begin(), row.end());
  }
  w.add("history", std::span<const double>(hist), Shape{history_.size(), width});
  return w.bytes();
}

void Trainer::save_checkpoint(const std::string& path) const {
  write_file_atomic(path, checkpoint_bytes());
}

void Trainer::restore(const std::vector<std::uint8_t>& bytes, bool force) {
  CheckpointReader r(bytes);
  const std::string hash = r.text("config_hash");
  if (!force) {
    require(hash == config_hash(config_), ErrorKind::checkpoint,
            "checkpoint config hash " + hash + " does not match the run's " + config_hash(config_) +
                " (use --force to override)");
  }
  const std::size_t epoch = r.u64("epoch");
  require(epoch <= config_.epochs, ErrorKind::checkpoint, "checkpoint is past the final epoch");
  read_network(r, net_);
  for (std::size_t l = 0; l < net_.layers.size(); ++l) {
    auto& v = opt_.velocity[l];
    const std::string p = "opt." + layer_name(l);
    v.weight = FpTensor(v.weight.shape(), r.f32(p + ".weight", v.weight.shape()));
    if (net_.layers[l].has_bn) {
      v.gamma = r.f32(p + ".gamma", Shape{v.gamma.size()});
      v.beta_shift = r.f32(p + ".beta_shift", Shape{v.beta_shift.size()});
    }
  }
  opt_.steps = r.u64("opt.steps");
  augment_rng_.restore(r.text("rng.augment"));
#if BNN_WITH_CMIM
  if (objective_) {
    objective_->rng.restore(r.text("rng.nce"));
    const Shape ts{net_.tap_layers.size()};
    Shape lps;
    objective_->config.log_partition = r.f64("critic.log_partition", &lps);
    require(lps == ts, ErrorKind::checkpoint, "critic.log_partition has the wrong shape");
    objective_->partition_set = r.u8("critic.partition_set", ts);
    for (std::size_t t = 0; t < objective_->banks.size(); ++t) {
      auto& bank = objective_->banks[t];
      const std::string p = "bank" + std::to_string(net_.tap_layers[t]);
      bank.restore(r.f32(p + ".values", Shape{bank.slots(), bank.dim()}),
                   r.u8(p + ".initialized", Shape{bank.slots()}));
    }
  }
#endif
  Shape hs;
  const auto hist = r.f64("history", &hs);
  require(hs.size() == 2 && hs[0] == epoch, ErrorKind::checkpoint, "checkpoint history is malformed");
  const std::size_t taps = net_.tap_layers.size();
  require(hs[0] == 0 || hs[1] == 8 + 2 * taps, ErrorKind::checkpoint,
          "checkpoint history width does not match the tapped layers");
  history_.clear();
  for (std::size_t e = 0; e < hs[0]; ++e) {
    history_.push_back(unflatten(std::span<const double>(hist).subspan(e * hs[1], hs[1]), taps));
  }
}

void Trainer::load_checkpoint(const std::string& path, bool force) {
  restore(read_file_bytes(path), force);
}

LoadedModel load_model(const std::string& checkpoint_path) {
  const CheckpointReader r = CheckpointReader::open(checkpoint_path);
  LoadedModel m;
  m.config = config_from_json(r.text("config"));
  require(r.text("config_hash") == config_hash(m.config), ErrorKind::checkpoint,
          "checkpoint config does not match its recorded hash");
  m.net = build_network<float>(m.config.arch, m.config.tap_layers,
                               derive_seed(m.config.seed, kInitStream));
  read_network(r, m.net);
  m.norm.mean = r.f32("norm.mean");
  m.norm.std = r.f32("norm.std");
  m.epochs_done = r.u64("epoch");
  return m;
}

Dataset load_test_split(const CmimConfig& config, const std::string& data_dir,
                        const Normalization& norm) {
  Dataset test = subset_per_class(read_split_raw(config, data_dir, false), config.test_per_class);
  normalize(test, &norm);
  test.validate();
  return test;
}

template OptimizerState<float> make_optimizer(const Network<float>&, double, double);
template OptimizerState<double> make_optimizer(const Network<double>&, double, double);
template void sgd_step(Network<float>&, const Gradients<float>&, OptimizerState<float>&, double);
template void sgd_step(Network<double>&, const Gradients<double>&, OptimizerState<double>&, double);
template EvalResult evaluate(const Network<float>&, const Dataset&, std::size_t);
template EvalResult evaluate(const Network<double>&, const Dataset&, std::size_t);

}  // namespace bnn
