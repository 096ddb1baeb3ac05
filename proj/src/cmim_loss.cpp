#include "bnn/cmim_loss.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace bnn {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

void CriticParams::validate() const {
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::config, "critic tau must be > 0");
  require(n_negatives >= 1, ErrorKind::config, "n_nce must be >= 1");
  require(std::isfinite(log_partition), ErrorKind::config, "critic log partition must be finite");
  require(m_pairs >= n_negatives, ErrorKind::config,
          "m_pairs (" + std::to_string(m_pairs) + ") must be >= n_nce (" +
              std::to_string(n_negatives) + ")");
}

double CriticParams::log_noise_ratio() const {
  return std::log(static_cast<double>(n_negatives)) - std::log(static_cast<double>(m_pairs));
}

CriticScores critic_from_score(double score, const CriticParams& params) {
  // h = sigmoid(z) with z = s/tau - log Z - log(N/M).
  const double z = score / params.tau - params.log_partition - params.log_noise_ratio();
  return {-softplus(-z), -softplus(z)};
}

template <class T>
double fixed_dot(std::span<const T> a, std::span<const T> b) {
  const std::size_t n = a.size();
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    acc1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    acc2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    acc3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  double s = (acc0 + acc1) + (acc2 + acc3);
  for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class T>
double l1_norm(std::span<const T> a) {
  const std::size_t n = a.size();
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 += std::abs(static_cast<double>(a[i]));
    acc1 += std::abs(static_cast<double>(a[i + 1]));
    acc2 += std::abs(static_cast<double>(a[i + 2]));
    acc3 += std::abs(static_cast<double>(a[i + 3]));
  }
  double s = (acc0 + acc1) + (acc2 + acc3);
  for (; i < n; ++i) s += std::abs(static_cast<double>(a[i]));
  return s;
}

template <class T>
CriticScores critic_log_scores(std::span<const T> anchor, std::span<const T> fp,
                               const CriticParams& params) {
  require(anchor.size() == fp.size(), ErrorKind::dimension,
          "critic operands differ in width: " + std::to_string(anchor.size()) + " vs " +
              std::to_string(fp.size()));
  return critic_from_score(fixed_dot(anchor, fp), params);
}

// ------------------------------------------------------------------- pooling

template <class T>
std::vector<T> pool_embedding(std::span<const T> activation, std::size_t channels,
                              std::size_t spatial) {
  require(activation.size() == channels * spatial, ErrorKind::dimension,
          "pool_embedding expects channels*spatial values");
  if (spatial == 1) return {activation.begin(), activation.end()};
  std::vector<T> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t s = 0; s < spatial; ++s) sum += activation[c * spatial + s];
    out[c] = static_cast<T>(sum / static_cast<double>(spatial));
  }
  return out;
}

template <class T>
BasicTensor<T> pool_embeddings(const BasicTensor<T>& activations, std::size_t channels,
                               std::size_t spatial) {
  if (spatial == 1) return activations;
  BasicTensor<T> out(Shape{activations.rows(), channels});
  for (std::size_t b = 0; b < activations.rows(); ++b) {
    auto pooled = pool_embedding(activations.row(b), channels, spatial);
    std::copy(pooled.begin(), pooled.end(), out.row(b).begin());
  }
  return out;
}

// --------------------------------------------------------------- memory bank

template <class T>
MemoryBank<T>::MemoryBank(std::size_t slots, std::size_t dim)
    : dim_(dim), values_(slots * dim, T(0)), initialized_(slots, 0) {}

template <class T>
bool MemoryBank<T>::all_initialized() const {
  for (auto f : initialized_) {
    if (!f) return false;
  }
  return true;
}

template <class T>
std::span<const T> MemoryBank<T>::read(std::size_t slot) const {
  require(slot < slots(), ErrorKind::dimension,
          "bank slot " + std::to_string(slot) + " out of range");
  return std::span<const T>(values_).subspan(slot * dim_, dim_);
}

template <class T>
void MemoryBank<T>::update(std::span<const std::size_t> indices, const BasicTensor<T>& embeddings) {
  require(embeddings.rows() == indices.size() && embeddings.cols() == dim_, ErrorKind::dimension,
          "bank update needs one " + std::to_string(dim_) + "-wide row per index");
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t slot = indices[r];
    require(slot < slots(), ErrorKind::dimension,
            "bank slot " + std::to_string(slot) + " out of range");
    auto row = embeddings.row(r);
    std::copy(row.begin(), row.end(), values_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
    initialized_[slot] = 1;
  }
}

template <class T>
std::vector<std::size_t> MemoryBank<T>::sample_negatives(std::size_t anchor, std::size_t count,
                                                         Rng& rng) const {
  const std::size_t n = slots();
  require(anchor < n, ErrorKind::dimension, "anchor slot out of range");
  const std::size_t pool = n - 1;
  require(count <= pool, ErrorKind::config,
          "n_nce " + std::to_string(count) + " exceeds the " + std::to_string(pool) +
              " available negative slots");
  // Floyd's sampling over the pool with the anchor removed.
  std::vector<std::uint8_t> taken(pool, 0);
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t j = pool - count; j < pool; ++j) {
    std::size_t t = static_cast<std::size_t>(rng.below(j + 1));
    if (taken[t]) t = j;
    taken[t] = 1;
    out.push_back(t < anchor ? t : t + 1);
  }
  return out;
}

template <class T>
void MemoryBank<T>::restore(std::vector<T> values, std::vector<std::uint8_t> flags) {
  require(values.size() == flags.size() * dim_, ErrorKind::checkpoint,
          "bank payload does not match its shape");
  values_ = std::move(values);
  initialized_ = std::move(flags);
}

// ----------------------------------------------------------------------- NCE

template <class T>
NceResult<T> nce_layer_loss(const BasicTensor<T>& anchors, const BasicTensor<T>& positives,
                            std::span<const std::size_t> indices, const MemoryBank<T>& bank,
                            const CriticParams& params, Rng& rng, WarmPolicy policy) {
  params.validate();
  require(anchors.shape() == positives.shape() && anchors.rank() == 2, ErrorKind::dimension,
          "anchors " + shape_string(anchors.shape()) + " and positives " +
              shape_string(positives.shape()) + " must match");
  require(indices.size() == anchors.rows(), ErrorKind::dimension,
          "one sample index per anchor required");
  require(bank.dim() == anchors.cols(), ErrorKind::dimension,
          "bank width " + std::to_string(bank.dim()) + " differs from embeddings " +
              std::to_string(anchors.cols()));
  const std::size_t batch = anchors.rows();
  const std::size_t dim = anchors.cols();
  const double inv_batch = 1.0 / static_cast<double>(batch);
  const double inv_tau = 1.0 / params.tau;

  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using CMap = Eigen::Map<const Vec>;

  NceResult<T> out;
  out.grad_fp = BasicTensor<T>(anchors.shape());
  out.grad_anchor = BasicTensor<T>(anchors.shape());
  Vec g_anchor(dim);
  double total = 0.0;
  // Running log-sum-exp of s / tau over every scored pair.
  double lse_max = -std::numeric_limits<double>::infinity();
  double lse_sum = 0.0;
  std::size_t scored = 0;
  auto track = [&](double v) {
    if (v > lse_max) {
      lse_sum = lse_sum * std::exp(lse_max - v) + 1.0;
      lse_max = v;
    } else {
      lse_sum += std::exp(v - lse_max);
    }
    ++scored;
  };

  for (std::size_t i = 0; i < batch; ++i) {
    const auto negatives = bank.sample_negatives(indices[i], params.n_negatives, rng);
    bool cold = false;
    for (std::size_t j : negatives) cold = cold || !bank.initialized(j);
    if (cold) {
      if (policy == WarmPolicy::strict) {
        fail(ErrorKind::bank_not_warm,
             "memory bank slot sampled as a negative for sample " + std::to_string(indices[i]) +
                 " has not been written yet");
      }
      continue;
    }
    ++out.active_anchors;
    const auto anchor = anchors.row(i);
    const auto positive = positives.row(i);
    const CMap a(anchor.data(), static_cast<Eigen::Index>(dim));

    const double s_pos = fixed_dot(anchor, positive);
    track(s_pos * inv_tau);
    const CriticScores pos = critic_from_score(s_pos, params);
    double loss_i = -pos.log_h;
    // d(-log h)/ds = -(1 - h)/tau
    const double d_pos = -std::exp(pos.log_1mh) * inv_tau * inv_batch;
    auto gfp = out.grad_fp.row(i);
    for (std::size_t d = 0; d < dim; ++d) gfp[d] = static_cast<T>(d_pos * anchor[d]);
    g_anchor = static_cast<T>(d_pos) * CMap(positive.data(), static_cast<Eigen::Index>(dim));

    // One pass per negative row: score, then accumulate while the row is hot.
    for (std::size_t j : negatives) {
      const CMap row(bank.read(j).data(), static_cast<Eigen::Index>(dim));
      const double s = static_cast<double>(a.dot(row));
      track(s * inv_tau);
      const CriticScores neg = critic_from_score(s, params);
      loss_i -= neg.log_1mh;
      // d(-log(1 - h))/ds = h/tau
      const double d_neg = std::exp(neg.log_h) * inv_tau * inv_batch;
      if (d_neg != 0.0) g_anchor.noalias() += static_cast<T>(d_neg) * row;
    }
    auto ga = out.grad_anchor.row(i);
    for (std::size_t d = 0; d < dim; ++d) ga[d] = g_anchor[static_cast<Eigen::Index>(d)];
    total += loss_i;
  }
  out.loss = total * inv_batch;
  if (scored > 0) out.log_mean_exp = lse_max + std::log(lse_sum / static_cast<double>(scored));
  require(std::isfinite(out.loss), ErrorKind::numeric, "NCE loss is not finite");
  return out;
}

// --------------------------------------------------------------- aggregation

double layer_weight(std::size_t k, double beta, std::size_t depth) {
  require(beta > 1.0, ErrorKind::config, "beta must be > 1");
  const double exponent = static_cast<double>(depth) - 1.0 - static_cast<double>(k);
  return std::pow(beta, -exponent);
}

double cmim_total(std::span<const double> nce, std::span<const std::size_t> layer_index,
                  double cls_loss, double lambda, double beta, std::size_t depth) {
  require(beta > 1.0, ErrorKind::config, "beta must be > 1");
  require(nce.size() == layer_index.size(), ErrorKind::dimension,
          "one layer index per NCE value required");
  double cmim = 0.0;
  for (std::size_t t = 0; t < nce.size(); ++t) {
    require(layer_index[t] >= 1 && layer_index[t] <= depth, ErrorKind::config,
            "layer index outside [1, K]");
    cmim += nce[t] * layer_weight(layer_index[t], beta, depth);
  }
  return lambda * cmim + cls_loss;
}

double cmim_total(std::span<const double> nce, double cls_loss, double lambda, double beta,
                  std::size_t depth) {
  std::vector<std::size_t> index(nce.size());
  for (std::size_t t = 0; t < index.size(); ++t) index[t] = t + 1;
  return cmim_total(nce, index, cls_loss, lambda, beta, depth);
}

// ----------------------------------------------------------------- objective

template <class T>
ObjectiveResult<T> cmim_objective(Network<T>& net, const BasicTensor<T>& x,
                                  std::span<const int> labels,
                                  std::span<const std::size_t> indices,
                                  const std::vector<MemoryBank<T>>& banks,
                                  const ObjectiveConfig& config, Rng& rng) {
  require(banks.size() == net.tap_layers.size(), ErrorKind::config,
          "one memory bank per tapped layer required");
  const std::size_t K = net.depth();
  auto fwd = forward(net, x, Mode::train);
  auto ce = softmax_cross_entropy(fwd.logits, labels);

  ObjectiveResult<T> out;
  out.correct = ce.correct;
  out.report.cls = ce.loss;
  std::vector<ActivationTap<T>> taps(K);
  for (std::size_t t = 0; t < net.tap_layers.size(); ++t) {
    const std::size_t k = net.tap_layers[t];
    const Layer<T>& layer = net.layers[k - 1];
    const LayerCache<T>& lc = fwd.cache.layers[k - 1];
    const std::size_t channels = layer.bn_channels();
    const std::size_t spatial = layer.spatial();

    BasicTensor<T> pooled = pool_embeddings(lc.a_fp, channels, spatial);
    BasicTensor<T> anchors = spatial == 1 ? lc.a_act : BasicTensor<T>(pooled.shape());
    if (spatial != 1) {
      for (std::size_t i = 0; i < pooled.size(); ++i) anchors[i] = activate(pooled[i], net.soft_mode);
    }
    CriticParams critic = config.critic;
    if (t < config.log_partition.size()) critic.log_partition = config.log_partition[t];
    NceResult<T> nce = nce_layer_loss(anchors, pooled, indices, banks[t], critic, rng, config.policy);
    out.report.nce.push_back(nce.loss);
    out.log_mean_exp.push_back(nce.log_mean_exp);
    out.active.push_back(nce.active_anchors);
    const T w = static_cast<T>(config.lambda * layer_weight(k, config.beta, K));

    ActivationTap<T>& tap = taps[k - 1];
    if (spatial == 1) {
      tap.grad_a_fp = fp_scale(nce.grad_fp, w);
      tap.grad_a_bin = fp_scale(nce.grad_anchor, w);
    } else {
      // Route the pooled gradients back to every spatial position.
      tap.grad_a_fp = BasicTensor<T>(lc.a_fp.shape());
      const T inv_spatial = T(1) / static_cast<T>(spatial);
      for (std::size_t b = 0; b < pooled.rows(); ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const T g = nce.grad_fp(b, c) +
                      nce.grad_anchor(b, c) * activate_grad(pooled(b, c), net.soft_mode);
          for (std::size_t s = 0; s < spatial; ++s) {
            tap.grad_a_fp(b, c * spatial + s) = w * g * inv_spatial;
          }
        }
      }
    }
    out.pooled.push_back(std::move(pooled));
  }
  for (std::size_t t = 0; t < out.report.nce.size(); ++t) {
    out.report.cmim += out.report.nce[t] * layer_weight(net.tap_layers[t], config.beta, K);
  }
  out.report.total =
      cmim_total(out.report.nce, net.tap_layers, out.report.cls, config.lambda, config.beta, K);
  out.grads = backward(net, fwd.cache, ce.grad, taps);
  if (config.detach_affine) {
    Gradients<T> cls_only = backward(net, fwd.cache, ce.grad, {});
    for (std::size_t l = 0; l < K; ++l) {
      out.grads.layers[l].gamma = std::move(cls_only.layers[l].gamma);
      out.grads.layers[l].beta_shift = std::move(cls_only.layers[l].beta_shift);
    }
  }
  return out;
}

#define BNN_INSTANTIATE_CMIM(T)                                                              \
  template double fixed_dot(std::span<const T>, std::span<const T>);                         \
  template double l1_norm(std::span<const T>);                                               \
  template CriticScores critic_log_scores(std::span<const T>, std::span<const T>,            \
                                          const CriticParams&);                              \
  template std::vector<T> pool_embedding(std::span<const T>, std::size_t, std::size_t);      \
  template BasicTensor<T> pool_embeddings(const BasicTensor<T>&, std::size_t, std::size_t);  \
  template class MemoryBank<T>;                                                              \
  template NceResult<T> nce_layer_loss(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                       std::span<const std::size_t>, const MemoryBank<T>&,   \
                                       const CriticParams&, Rng&, WarmPolicy);               \
  template ObjectiveResult<T> cmim_objective(Network<T>&, const BasicTensor<T>&,             \
                                             std::span<const int>,                           \
                                             std::span<const std::size_t>,                   \
                                             const std::vector<MemoryBank<T>>&,              \
                                             const ObjectiveConfig&, Rng&);

BNN_INSTANTIATE_CMIM(float)
BNN_INSTANTIATE_CMIM(double)

#undef BNN_INSTANTIATE_CMIM

}  // namespace bnn
