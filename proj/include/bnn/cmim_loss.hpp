#pragma once

// Contrastive mutual-information objective between the binary activations of
// a layer and its full-precision activations.
//
// For an anchor sign vector a_B^i and a full-precision embedding a_F^j the
// critic score is s = <a_B^i, a_F^j> and
//
//     h = exp(s / tau) / (exp(s / tau) + N / M).
//
// Positive pairs (i == j) have s == ||a_F^i||_1 since a_B^i = sgn(a_F^i).
// Negatives come from a memory bank of stale embeddings of other samples.
// The per-layer loss is the negated log-likelihood
//
//     -(1/B) sum_i [ log h(i, i) + sum_{j in neg(i)} log(1 - h(i, j)) ],
//
// and the layers combine as  lambda * sum_k nce_k / beta^(K-1-k) + cls.

#include <span>
#include <vector>

#include "bnn/classification.hpp"
#include "bnn/network.hpp"
#include "bnn/rng.hpp"

namespace bnn {

struct CriticParams {
  double tau = 0.1;
  std::size_t n_negatives = 1024;  // N
  std::size_t m_pairs = 1024;      // M, usually the training-set size
  // log Z of a fixed partition constant dividing exp(s / tau); 0 leaves the
  // critic as exp(s/tau) / (exp(s/tau) + N/M).
  double log_partition = 0.0;

  void validate() const;
  double log_noise_ratio() const;  // log(N / M)
};

struct CriticScores {
  double log_h = 0.0;
  double log_1mh = 0.0;
};

// Log-space critic for a given inner product; finite for every finite s.
// With a partition constant: h = (e^{s/tau} / Z) / (e^{s/tau} / Z + N/M).
CriticScores critic_from_score(double score, const CriticParams& params);

// Inner product with a fixed summation order (four interleaved lanes, double
// accumulators). l1_norm uses the same order, so <sgn(a), a> == ||a||_1
// holds bit-for-bit.
template <class T>
double fixed_dot(std::span<const T> a, std::span<const T> b);
template <class T>
double l1_norm(std::span<const T> a);

template <class T>
CriticScores critic_log_scores(std::span<const T> anchor, std::span<const T> fp,
                               const CriticParams& params);

// Fixed-width embedding of one sample's activation: the raw vector for dense
// layers (spatial == 1), the per-channel spatial mean for conv layers.
template <class T>
std::vector<T> pool_embedding(std::span<const T> activation, std::size_t channels,
                              std::size_t spatial);
template <class T>
BasicTensor<T> pool_embeddings(const BasicTensor<T>& activations, std::size_t channels,
                               std::size_t spatial);

template <class T>
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t slots, std::size_t dim);

  std::size_t slots() const { return initialized_.size(); }
  std::size_t dim() const { return dim_; }
  bool initialized(std::size_t slot) const { return initialized_.at(slot) != 0; }
  bool all_initialized() const;
  std::span<const T> read(std::size_t slot) const;

  // Replaces the slots of `indices` with the matching rows of `embeddings`.
  void update(std::span<const std::size_t> indices, const BasicTensor<T>& embeddings);

  // `count` distinct slots drawn uniformly from every slot except `anchor`.
  std::vector<std::size_t> sample_negatives(std::size_t anchor, std::size_t count,
                                            Rng& rng) const;

  const std::vector<T>& values() const { return values_; }
  const std::vector<std::uint8_t>& init_flags() const { return initialized_; }
  void restore(std::vector<T> values, std::vector<std::uint8_t> flags);

 private:
  std::size_t dim_ = 0;
  std::vector<T> values_;
  std::vector<std::uint8_t> initialized_;
};

enum class WarmPolicy {
  strict,     // a cold sampled slot is a bank_not_warm error
  skip_cold,  // anchors with a cold sampled slot contribute nothing
};

template <class T>
struct NceResult {
  double loss = 0.0;
  BasicTensor<T> grad_fp;      // d loss / d positives
  BasicTensor<T> grad_anchor;  // d loss / d anchors
  std::size_t active_anchors = 0;
  // log mean exp(s / tau) over every scored pair (positives and negatives).
  // Adding log M gives the one-shot estimate of log Z; 0 when nothing scored.
  double log_mean_exp = 0.0;
};

template <class T>
NceResult<T> nce_layer_loss(const BasicTensor<T>& anchors, const BasicTensor<T>& positives,
                            std::span<const std::size_t> indices, const MemoryBank<T>& bank,
                            const CriticParams& params, Rng& rng,
                            WarmPolicy policy = WarmPolicy::strict);

// 1 / beta^(K-1-k) for layer k (1-based) of a K-layer network.
double layer_weight(std::size_t k, double beta, std::size_t depth);

// lambda * sum_t nce[t] * layer_weight(layer_index[t]) + cls.
double cmim_total(std::span<const double> nce, std::span<const std::size_t> layer_index,
                  double cls_loss, double lambda, double beta, std::size_t depth);
// Same with layer indices 1..nce.size().
double cmim_total(std::span<const double> nce, double cls_loss, double lambda, double beta,
                  std::size_t depth);

struct CmimLossReport {
  std::vector<double> nce;  // per tapped layer
  double cmim = 0.0;        // sum_k nce_k / beta^(K-1-k)
  double cls = 0.0;
  double total = 0.0;       // lambda * cmim + cls
};

struct ObjectiveConfig {
  double lambda = 0.8;
  double beta = 2.0;
  CriticParams critic;
  WarmPolicy policy = WarmPolicy::skip_cold;
  std::vector<double> log_partition;  // per tap; overrides critic.log_partition when set
  // Batch-norm gamma and shift take their gradients from the cross-entropy
  // alone; the contrastive gradient reaches the weights only.
  bool detach_affine = false;
};

template <class T>
struct ObjectiveResult {
  CmimLossReport report;
  std::size_t correct = 0;
  Gradients<T> grads;
  std::vector<BasicTensor<T>> pooled;  // per tap, for the bank update
  std::vector<double> log_mean_exp;    // per tap, see NceResult
  std::vector<std::size_t> active;     // per tap, anchors that contributed
};

// One full CMIM step: train-mode forward, cross-entropy, one NCE term per
// tapped layer against banks[t], and backward with the NCE gradients
// injected at the taps. Banks are read, never written.
template <class T>
ObjectiveResult<T> cmim_objective(Network<T>& net, const BasicTensor<T>& x,
                                  std::span<const int> labels,
                                  std::span<const std::size_t> indices,
                                  const std::vector<MemoryBank<T>>& banks,
                                  const ObjectiveConfig& config, Rng& rng);

}  // namespace bnn
