#pragma once

// Binary networks with latent full-precision weights.
//
// Layer k (1-based, K layers total) computes pre_k = W_k * input_k, then for
// k < K a batch-normalized activation a_fp^k and its sign a_bin^k. The first
// and last layers keep float weights ("edge" layers): the first sees the raw
// input, the last sees a_fp^{K-1} and emits logits without normalization.
// Hidden layers binarize their latent weights and consume a_bin^{k-1}, so
// their products run through the xnor-popcount kernel.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

enum class Mode { train, eval };
enum class LayerKind { dense, conv };

struct ConvGeometry {
  std::size_t in_channels = 0, in_height = 0, in_width = 0;
  std::size_t out_channels = 0, out_height = 0, out_width = 0;
  std::size_t kernel = 3, stride = 1, pad = 1;

  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t positions() const { return out_height * out_width; }
};

template <class T>
struct BatchNormState {
  std::vector<T> gamma, beta_shift, running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t features)
      : gamma(features, T(1)),
        beta_shift(features, T(0)),
        running_mean(features, T(0)),
        running_var(features, T(1)) {}
  std::size_t features() const { return gamma.size(); }
};

// Input layout is [batch x channels*spatial]; statistics are per channel over
// batch*spatial elements.
template <class T>
struct BatchNormCache {
  BasicTensor<T> x_hat;
  std::vector<T> mean, inv_std;
  std::size_t spatial = 1;
  bool batch_stats = false;
};

template <class T>
struct BatchNormOutput {
  BasicTensor<T> y;
  BatchNormCache<T> cache;
};

template <class T>
struct BatchNormGrads {
  BasicTensor<T> grad_x;
  std::vector<T> grad_gamma, grad_beta_shift;
};

// Train mode normalizes with batch statistics and updates the running ones;
// eval mode uses the running statistics and leaves `state` untouched.
template <class T>
BatchNormOutput<T> batchnorm_forward(BatchNormState<T>& state, const BasicTensor<T>& x,
                                     std::size_t spatial, Mode mode);
template <class T>
BatchNormOutput<T> batchnorm_forward(const BatchNormState<T>& state, const BasicTensor<T>& x,
                                     std::size_t spatial);
template <class T>
BatchNormGrads<T> batchnorm_backward(const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache,
                                     const BasicTensor<T>& grad_y);

// Clipped straight-through estimator: grad_out where |pre_activation| <= 1.
template <class T>
BasicTensor<T> ste_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre_activation);

// Sign in hard mode; tanh(10x) in soft mode (test-only smooth surrogate).
template <class T>
T activate(T x, bool soft);
// d activate / dx as used by backward: STE window in hard mode.
template <class T>
T activate_grad(T x, bool soft);

template <class T>
struct Layer {
  LayerKind kind = LayerKind::dense;
  bool is_fp_edge = false;
  bool has_bn = true;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  ConvGeometry conv;
  BasicTensor<T> w_latent;  // dense [out x in]; conv [out_channels x patch]
  BitTensor w_binary_cache;
  BatchNormState<T> bn;

  std::size_t bn_channels() const { return kind == LayerKind::conv ? conv.out_channels : out_features; }
  std::size_t spatial() const { return kind == LayerKind::conv ? conv.positions() : 1; }
};

template <class T>
class Network {
 public:
  std::vector<Layer<T>> layers;
  std::vector<std::size_t> tap_layers;  // 1-based layer indices
  bool soft_mode = false;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_features() const { return layers.front().in_features; }
  std::size_t output_features() const { return layers.back().out_features; }

  // Structural checks: adjacent widths agree, edges flagged, taps in range.
  void validate() const;
  void refresh_binary_cache();
};

struct ConvSpec {
  std::size_t channels = 0;
  std::size_t stride = 1;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct ArchSpec {
  std::string type = "mlp";             // "mlp" or "conv"
  std::vector<std::size_t> widths;      // mlp: d0, d1, ..., classes
  std::vector<std::size_t> input_shape; // conv: channels, height, width
  std::vector<ConvSpec> conv;           // conv: first entry is the float edge layer
  std::size_t classes = 0;              // conv only
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

template <class T>
Network<T> build_network(const ArchSpec& arch, std::vector<std::size_t> tap_layers,
                         std::uint64_t seed);

template <class T>
struct LayerCache {
  BasicTensor<T> input;    // what the layer consumed
  BasicTensor<T> weights;  // effective weights: latent for edges, activate(latent) otherwise
  BasicTensor<T> pre_bn;
  BasicTensor<T> a_fp;     // post-BN activation A_F^k (empty for the logits layer)
  BasicTensor<T> a_act;    // activate(a_fp): +-1 in hard mode
  BitTensor a_bin;         // sign_binarize(a_fp)
  BatchNormCache<T> bn;
};

template <class T>
struct ForwardCache {
  Mode mode = Mode::eval;
  bool soft_mode = false;
  std::size_t batch = 0;
  std::vector<LayerCache<T>> layers;
};

template <class T>
struct ForwardResult {
  BasicTensor<T> logits;
  ForwardCache<T> cache;
};

// Train mode refreshes w_binary_cache and the running BN statistics.
template <class T>
ForwardResult<T> forward(Network<T>& net, const BasicTensor<T>& x, Mode mode);
// Eval-mode forward that never touches the network.
template <class T>
ForwardResult<T> forward(const Network<T>& net, const BasicTensor<T>& x);

// Output of the first k layers: a_fp^k for k < K, the logits for k == K.
template <class T>
BasicTensor<T> sectional_forward(const Network<T>& net, const BasicTensor<T>& x, std::size_t k);

template <class T>
struct LayerGrads {
  BasicTensor<T> weight;
  std::vector<T> gamma, beta_shift;
};

template <class T>
struct Gradients {
  std::vector<LayerGrads<T>> layers;
};

// Extra gradients injected into layer activations (indexed by 0-based layer).
// grad_a_bin flows through the activation's STE; grad_a_fp is added directly.
template <class T>
struct ActivationTap {
  BasicTensor<T> grad_a_fp;
  BasicTensor<T> grad_a_bin;
};

template <class T>
Gradients<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                      const BasicTensor<T>& grad_logits,
                      const std::vector<ActivationTap<T>>& taps = {});

// Copies the layer's weights into a network of another scalar type.
template <class To, class From>
Network<To> convert_network(const Network<From>& net);

}  // namespace bnn
