#include "bnn/network.hpp"

#include <cmath>

#include "bnn/rng.hpp"

namespace bnn {

// ------------------------------------------------------------- batch norm

namespace {

template <class T>
void check_bn_input(std::size_t features, const BasicTensor<T>& x, std::size_t spatial) {
  require(x.rank() == 2 && spatial > 0 && x.cols() == features * spatial, ErrorKind::dimension,
          "batchnorm expects [batch x " + std::to_string(features) + "*" +
              std::to_string(spatial) + "], got " + shape_string(x.shape()));
}

template <class T>
BatchNormOutput<T> normalize(const BatchNormState<T>& state, const BasicTensor<T>& x,
                             std::size_t spatial, std::vector<T> mean, std::vector<T> var,
                             bool batch_stats) {
  const std::size_t channels = state.features();
  const std::size_t batch = x.rows();
  BatchNormOutput<T> out{BasicTensor<T>(x.shape()), {}};
  out.cache.x_hat = BasicTensor<T>(x.shape());
  out.cache.mean = std::move(mean);
  out.cache.inv_std.resize(channels);
  out.cache.spatial = spatial;
  out.cache.batch_stats = batch_stats;
  for (std::size_t c = 0; c < channels; ++c) {
    const T inv_std = T(1) / std::sqrt(var[c] + state.eps);
    require(std::isfinite(inv_std) && std::isfinite(out.cache.mean[c]), ErrorKind::numeric,
            "batchnorm statistics not finite for channel " + std::to_string(c));
    out.cache.inv_std[c] = inv_std;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = b * x.cols() + c * spatial + s;
        const T xh = (x[i] - out.cache.mean[c]) * inv_std;
        out.cache.x_hat[i] = xh;
        out.y[i] = state.gamma[c] * xh + state.beta_shift[c];
      }
    }
  }
  return out;
}

}  // namespace

template <class T>
BatchNormOutput<T> batchnorm_forward(BatchNormState<T>& state, const BasicTensor<T>& x,
                                     std::size_t spatial, Mode mode) {
  if (mode == Mode::eval) return batchnorm_forward(std::as_const(state), x, spatial);
  const std::size_t channels = state.features();
  check_bn_input(channels, x, spatial);
  const std::size_t batch = x.rows();
  require(batch >= 2, ErrorKind::dimension, "train-mode batchnorm needs batch >= 2");
  const double count = static_cast<double>(batch * spatial);
  std::vector<T> mean(channels), var(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < spatial; ++s) sum += x[b * x.cols() + c * spatial + s];
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = x[b * x.cols() + c * spatial + s] - mu;
        sq += d * d;
      }
    }
    mean[c] = static_cast<T>(mu);
    var[c] = static_cast<T>(sq / count);
    require(std::isfinite(mu) && std::isfinite(sq), ErrorKind::numeric,
            "batchnorm statistics not finite for channel " + std::to_string(c));
  }
  auto out = normalize(state, x, spatial, mean, var, true);
  const T m = state.momentum;
  const T unbias = static_cast<T>(count / std::max(1.0, count - 1.0));
  for (std::size_t c = 0; c < channels; ++c) {
    state.running_mean[c] = (T(1) - m) * state.running_mean[c] + m * mean[c];
    state.running_var[c] = (T(1) - m) * state.running_var[c] + m * var[c] * unbias;
  }
  return out;
}

template <class T>
BatchNormOutput<T> batchnorm_forward(const BatchNormState<T>& state, const BasicTensor<T>& x,
                                     std::size_t spatial) {
  check_bn_input(state.features(), x, spatial);
  return normalize(state, x, spatial, state.running_mean, state.running_var, false);
}

template <class T>
BatchNormGrads<T> batchnorm_backward(const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache,
                                     const BasicTensor<T>& grad_y) {
  require(grad_y.shape() == cache.x_hat.shape(), ErrorKind::dimension,
          "batchnorm_backward gradient shape " + shape_string(grad_y.shape()) +
              " does not match cache " + shape_string(cache.x_hat.shape()));
  const std::size_t channels = state.features();
  const std::size_t spatial = cache.spatial;
  const std::size_t batch = grad_y.rows();
  const std::size_t cols = grad_y.cols();
  BatchNormGrads<T> g{BasicTensor<T>(grad_y.shape()), std::vector<T>(channels),
                      std::vector<T>(channels)};
  const double count = static_cast<double>(batch * spatial);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = b * cols + c * spatial + s;
        sum_g += grad_y[i];
        sum_gx += static_cast<double>(grad_y[i]) * cache.x_hat[i];
      }
    }
    g.grad_beta_shift[c] = static_cast<T>(sum_g);
    g.grad_gamma[c] = static_cast<T>(sum_gx);
    const T scale = state.gamma[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = b * cols + c * spatial + s;
        if (cache.batch_stats) {
          const double centered = grad_y[i] - sum_g / count - cache.x_hat[i] * (sum_gx / count);
          g.grad_x[i] = static_cast<T>(scale * centered);
        } else {
          g.grad_x[i] = scale * grad_y[i];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------- activation

template <class T>
T activate(T x, bool soft) {
  if (soft) return std::tanh(T(10) * x);
  return x >= T(0) ? T(1) : T(-1);
}

template <class T>
T activate_grad(T x, bool soft) {
  if (soft) {
    const T t = std::tanh(T(10) * x);
    return T(10) * (T(1) - t * t);
  }
  return std::abs(x) <= T(1) ? T(1) : T(0);
}

template <class T>
BasicTensor<T> ste_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre_activation) {
  require(grad_out.shape() == pre_activation.shape(), ErrorKind::dimension,
          "ste_backward shape mismatch " + shape_string(grad_out.shape()) + " vs " +
              shape_string(pre_activation.shape()));
  BasicTensor<T> out(grad_out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::abs(pre_activation[i]) <= T(1) ? grad_out[i] : T(0);
  }
  return out;
}

// ------------------------------------------------------------------- network

template <class T>
void Network<T>::validate() const {
  require(!layers.empty(), ErrorKind::config, "network has no layers");
  const std::size_t K = layers.size();
  for (std::size_t l = 0; l < K; ++l) {
    const auto& layer = layers[l];
    const bool edge = (l == 0 || l + 1 == K);
    require(layer.is_fp_edge == edge, ErrorKind::config,
            "layer " + std::to_string(l + 1) + " edge flag inconsistent");
    require(layer.has_bn == (l + 1 < K), ErrorKind::config,
            "only the last layer may skip batchnorm");
    if (l > 0) {
      require(layer.in_features == layers[l - 1].out_features, ErrorKind::config,
              "layer " + std::to_string(l + 1) + " expects " +
                  std::to_string(layer.in_features) + " inputs, previous layer emits " +
                  std::to_string(layers[l - 1].out_features));
    }
    const std::size_t wcols =
        layer.kind == LayerKind::conv ? layer.conv.patch() : layer.in_features;
    const std::size_t wrows =
        layer.kind == LayerKind::conv ? layer.conv.out_channels : layer.out_features;
    require(layer.w_latent.shape() == Shape{wrows, wcols}, ErrorKind::config,
            "layer " + std::to_string(l + 1) + " weight shape " +
                shape_string(layer.w_latent.shape()));
  }
  for (std::size_t k : tap_layers) {
    require(k >= 1 && k < K, ErrorKind::config,
            "tap layer " + std::to_string(k) + " must be in [1, " + std::to_string(K - 1) + "]");
  }
}

template <class T>
void Network<T>::refresh_binary_cache() {
  for (auto& layer : layers) layer.w_binary_cache = sign_binarize(layer.w_latent);
}

namespace {

template <class T>
void init_uniform(BasicTensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
}

template <class T>
Layer<T> dense_layer(std::size_t in, std::size_t out, Rng& rng) {
  Layer<T> layer;
  layer.kind = LayerKind::dense;
  layer.in_features = in;
  layer.out_features = out;
  layer.w_latent = BasicTensor<T>(Shape{out, in});
  init_uniform(layer.w_latent, in, rng);
  layer.bn = BatchNormState<T>(out);
  return layer;
}

}  // namespace

template <class T>
Network<T> build_network(const ArchSpec& arch, std::vector<std::size_t> tap_layers,
                         std::uint64_t seed) {
  Rng rng(seed);
  Network<T> net;
  if (arch.type == "mlp") {
    require(arch.widths.size() >= 2, ErrorKind::config, "mlp needs at least two widths");
    for (std::size_t i = 0; i + 1 < arch.widths.size(); ++i) {
      require(arch.widths[i] > 0 && arch.widths[i + 1] > 0, ErrorKind::config,
              "mlp widths must be positive");
      net.layers.push_back(dense_layer<T>(arch.widths[i], arch.widths[i + 1], rng));
    }
  } else if (arch.type == "conv") {
    require(arch.input_shape.size() == 3, ErrorKind::config,
            "conv arch needs input_shape [channels, height, width]");
    require(!arch.conv.empty() && arch.classes > 0, ErrorKind::config,
            "conv arch needs conv layers and classes");
    std::size_t c = arch.input_shape[0], h = arch.input_shape[1], w = arch.input_shape[2];
    for (const auto& spec : arch.conv) {
      require(spec.channels > 0 && spec.stride > 0, ErrorKind::config,
              "conv channels and stride must be positive");
      Layer<T> layer;
      layer.kind = LayerKind::conv;
      ConvGeometry& g = layer.conv;
      g.in_channels = c;
      g.in_height = h;
      g.in_width = w;
      g.out_channels = spec.channels;
      g.stride = spec.stride;
      g.out_height = (h + 2 * g.pad - g.kernel) / g.stride + 1;
      g.out_width = (w + 2 * g.pad - g.kernel) / g.stride + 1;
      layer.in_features = c * h * w;
      layer.out_features = g.out_channels * g.positions();
      layer.w_latent = BasicTensor<T>(Shape{g.out_channels, g.patch()});
      init_uniform(layer.w_latent, g.patch(), rng);
      layer.bn = BatchNormState<T>(g.out_channels);
      net.layers.push_back(std::move(layer));
      c = g.out_channels;
      h = g.out_height;
      w = g.out_width;
    }
    net.layers.push_back(dense_layer<T>(c * h * w, arch.classes, rng));
  } else {
    fail(ErrorKind::config, "unknown arch type '" + arch.type + "'");
  }
  const std::size_t K = net.layers.size();
  for (std::size_t l = 0; l < K; ++l) {
    net.layers[l].is_fp_edge = (l == 0 || l + 1 == K);
    net.layers[l].has_bn = l + 1 < K;
    if (!net.layers[l].has_bn) net.layers[l].bn = BatchNormState<T>();
  }
  net.tap_layers = std::move(tap_layers);
  net.validate();
  net.refresh_binary_cache();
  return net;
}

// ------------------------------------------------------------------- forward

namespace {

// Rows of one sample's patches: [positions x patch].
template <class T>
BasicTensor<T> im2col(std::span<const T> image, const ConvGeometry& g, T pad_value) {
  BasicTensor<T> cols(Shape{g.positions(), g.patch()});
  const std::size_t k = g.kernel;
  for (std::size_t oy = 0; oy < g.out_height; ++oy) {
    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
      T* dst = &cols(oy * g.out_width + ox, 0);
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.in_height) &&
                                ix < static_cast<long>(g.in_width);
            *dst++ = inside ? image[(c * g.in_height + iy) * g.in_width + ix] : pad_value;
          }
        }
      }
    }
  }
  return cols;
}

template <class T>
void col2im_add(const BasicTensor<T>& cols, const ConvGeometry& g, std::span<T> image) {
  const std::size_t k = g.kernel;
  for (std::size_t oy = 0; oy < g.out_height; ++oy) {
    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
      const T* src = &cols(oy * g.out_width + ox, 0);
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t kx = 0; kx < k; ++kx, ++src) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.in_height) &&
                ix < static_cast<long>(g.in_width)) {
              image[(c * g.in_height + iy) * g.in_width + ix] += *src;
            }
          }
        }
      }
    }
  }
}

template <class T>
BasicTensor<T> effective_weights(const Layer<T>& layer, bool soft) {
  if (layer.is_fp_edge) return layer.w_latent;
  BasicTensor<T> w(layer.w_latent.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = activate(layer.w_latent[i], soft);
  return w;
}

// pre-activation of one layer; `input_bits` is only used by hard binary layers.
template <class T>
BasicTensor<T> layer_product(const Layer<T>& layer, const BasicTensor<T>& input,
                             const BasicTensor<T>& weights, const BitTensor* input_bits,
                             const BitTensor& weight_bits, bool soft) {
  const std::size_t batch = input.rows();
  const bool use_xnor = !layer.is_fp_edge && !soft;
  if (layer.kind == LayerKind::dense) {
    if (use_xnor) return xnor_matmul_nt<T>(*input_bits, weight_bits);
    return fp_matmul_nt(input, weights);
  }
  const ConvGeometry& g = layer.conv;
  const std::size_t P = g.positions();
  BasicTensor<T> pre(Shape{batch, g.out_channels * P});
  const T pad_value = layer.is_fp_edge ? T(0) : activate(T(0), soft);
  for (std::size_t b = 0; b < batch; ++b) {
    BasicTensor<T> cols = im2col(input.row(b), g, pad_value);
    BasicTensor<T> out = use_xnor ? xnor_matmul_nt<T>(sign_binarize(cols), weight_bits)
                                  : fp_matmul_nt(cols, weights);  // [P x O]
    auto dst = pre.row(b);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t o = 0; o < g.out_channels; ++o) dst[o * P + p] = out(p, o);
    }
  }
  return pre;
}

template <class T>
ForwardResult<T> forward_impl(const Network<T>& net, std::vector<BatchNormState<T>>* bn_states,
                              const BasicTensor<T>& x, Mode mode, std::size_t stop_after) {
  const std::size_t K = net.depth();
  require(x.rank() == 2 && x.cols() == net.input_features(), ErrorKind::dimension,
          "forward expects [batch x " + std::to_string(net.input_features()) + "], got " +
              shape_string(x.shape()));
  require(x.rows() >= 1, ErrorKind::dimension, "forward needs batch >= 1");
  if (mode == Mode::train) {
    require(x.rows() >= 2, ErrorKind::dimension, "train-mode forward needs batch >= 2");
  }
  const bool soft = net.soft_mode;
  ForwardResult<T> result;
  ForwardCache<T>& cache = result.cache;
  cache.mode = mode;
  cache.soft_mode = soft;
  cache.batch = x.rows();
  cache.layers.resize(std::min(K, stop_after));
  for (std::size_t l = 0; l < cache.layers.size(); ++l) {
    const Layer<T>& layer = net.layers[l];
    LayerCache<T>& lc = cache.layers[l];
    const BitTensor* input_bits = nullptr;
    if (l == 0) {
      lc.input = x;
    } else if (l + 1 == K) {
      lc.input = cache.layers[l - 1].a_fp;
    } else {
      lc.input = cache.layers[l - 1].a_act;
      input_bits = &cache.layers[l - 1].a_bin;
    }
    lc.weights = effective_weights(layer, soft);
    const BitTensor weight_bits =
        (!layer.is_fp_edge && !soft) ? sign_binarize(layer.w_latent) : BitTensor();
    lc.pre_bn = layer_product(layer, lc.input, lc.weights, input_bits, weight_bits, soft);
    if (!layer.has_bn) {
      result.logits = lc.pre_bn;
      continue;
    }
    BatchNormOutput<T> bn =
        bn_states ? batchnorm_forward((*bn_states)[l], lc.pre_bn, layer.spatial(), mode)
                  : batchnorm_forward(layer.bn, lc.pre_bn, layer.spatial());
    lc.a_fp = std::move(bn.y);
    lc.bn = std::move(bn.cache);
    lc.a_act = BasicTensor<T>(lc.a_fp.shape());
    for (std::size_t i = 0; i < lc.a_fp.size(); ++i) lc.a_act[i] = activate(lc.a_fp[i], soft);
    lc.a_bin = sign_binarize(lc.a_fp);
  }
  return result;
}

}  // namespace

template <class T>
ForwardResult<T> forward(Network<T>& net, const BasicTensor<T>& x, Mode mode) {
  if (mode == Mode::eval) return forward(std::as_const(net), x);
  std::vector<BatchNormState<T>> states;
  states.reserve(net.depth());
  for (const auto& layer : net.layers) states.push_back(layer.bn);
  auto result = forward_impl(std::as_const(net), &states, x, mode, net.depth());
  for (std::size_t l = 0; l < net.depth(); ++l) net.layers[l].bn = std::move(states[l]);
  net.refresh_binary_cache();
  return result;
}

template <class T>
ForwardResult<T> forward(const Network<T>& net, const BasicTensor<T>& x) {
  return forward_impl(net, static_cast<std::vector<BatchNormState<T>>*>(nullptr), x, Mode::eval,
                      net.depth());
}

template <class T>
BasicTensor<T> sectional_forward(const Network<T>& net, const BasicTensor<T>& x, std::size_t k) {
  require(k >= 1 && k <= net.depth(), ErrorKind::dimension,
          "sectional_forward k=" + std::to_string(k) + " outside [1, " +
              std::to_string(net.depth()) + "]");
  auto result = forward_impl(net, static_cast<std::vector<BatchNormState<T>>*>(nullptr), x,
                             Mode::eval, k);
  if (k == net.depth()) return result.logits;
  return result.cache.layers[k - 1].a_fp;
}

// ------------------------------------------------------------------ backward

template <class T>
Gradients<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                      const BasicTensor<T>& grad_logits,
                      const std::vector<ActivationTap<T>>& taps) {
  const std::size_t K = net.depth();
  require(cache.layers.size() == K, ErrorKind::dimension,
          "forward cache has " + std::to_string(cache.layers.size()) + " layers, network has " +
              std::to_string(K));
  require(cache.soft_mode == net.soft_mode, ErrorKind::dimension,
          "forward cache and network disagree on soft mode");
  require(taps.empty() || taps.size() == K, ErrorKind::dimension,
          "activation taps must be empty or one per layer");
  const std::size_t batch = cache.batch;
  require(grad_logits.shape() == Shape{batch, net.output_features()}, ErrorKind::dimension,
          "grad_logits shape " + shape_string(grad_logits.shape()) + " does not match [" +
              std::to_string(batch) + " x " + std::to_string(net.output_features()) + "]");
  const bool soft = cache.soft_mode;

  Gradients<T> grads;
  grads.layers.resize(K);
  BasicTensor<T> upstream;  // gradient w.r.t. the output consumed by the next layer
  for (std::size_t li = K; li-- > 0;) {
    const Layer<T>& layer = net.layers[li];
    const LayerCache<T>& lc = cache.layers[li];
    LayerGrads<T>& lg = grads.layers[li];
    require(lc.pre_bn.cols() == layer.out_features, ErrorKind::dimension,
            "forward cache does not match layer " + std::to_string(li + 1));

    BasicTensor<T> g_pre;
    if (!layer.has_bn) {
      g_pre = grad_logits;
    } else {
      // The next layer consumed a_fp if it is the last one, a_act otherwise.
      const bool next_took_fp = (li + 2 == K);
      BasicTensor<T> g_fp(lc.a_fp.shape());
      BasicTensor<T> g_act(lc.a_fp.shape());
      if (!upstream.empty()) (next_took_fp ? g_fp : g_act) = std::move(upstream);
      if (!taps.empty()) {
        const auto& tap = taps[li];
        if (!tap.grad_a_fp.empty()) g_fp = fp_add(g_fp, tap.grad_a_fp);
        if (!tap.grad_a_bin.empty()) g_act = fp_add(g_act, tap.grad_a_bin);
      }
      for (std::size_t i = 0; i < g_fp.size(); ++i) {
        g_fp[i] += g_act[i] * activate_grad(lc.a_fp[i], soft);
      }
      BatchNormGrads<T> bg = batchnorm_backward(layer.bn, lc.bn, g_fp);
      g_pre = std::move(bg.grad_x);
      lg.gamma = std::move(bg.grad_gamma);
      lg.beta_shift = std::move(bg.grad_beta_shift);
    }

    BasicTensor<T> g_input;
    if (layer.kind == LayerKind::dense) {
      lg.weight = fp_matmul_tn(g_pre, lc.input);
      if (li > 0) g_input = fp_matmul(g_pre, lc.weights);
    } else {
      const ConvGeometry& g = layer.conv;
      const std::size_t P = g.positions();
      const T pad_value = layer.is_fp_edge ? T(0) : activate(T(0), soft);
      lg.weight = BasicTensor<T>(lc.weights.shape());
      if (li > 0) g_input = BasicTensor<T>(lc.input.shape());
      for (std::size_t b = 0; b < batch; ++b) {
        BasicTensor<T> g_b(Shape{P, g.out_channels});
        auto src = g_pre.row(b);
        for (std::size_t p = 0; p < P; ++p) {
          for (std::size_t o = 0; o < g.out_channels; ++o) g_b(p, o) = src[o * P + p];
        }
        BasicTensor<T> cols = im2col(lc.input.row(b), g, pad_value);
        lg.weight = fp_add(lg.weight, fp_matmul_tn(g_b, cols));
        if (li > 0) col2im_add(fp_matmul(g_b, lc.weights), g, g_input.row(b));
      }
    }
    if (!layer.is_fp_edge) {
      for (std::size_t i = 0; i < lg.weight.size(); ++i) {
        lg.weight[i] *= activate_grad(layer.w_latent[i], soft);
      }
    }
    upstream = std::move(g_input);
  }
  return grads;
}

template <class To, class From>
Network<To> convert_network(const Network<From>& net) {
  Network<To> out;
  out.tap_layers = net.tap_layers;
  out.soft_mode = net.soft_mode;
  auto cast_vec = [](const std::vector<From>& v) { return std::vector<To>(v.begin(), v.end()); };
  for (const auto& l : net.layers) {
    Layer<To> c;
    c.kind = l.kind;
    c.is_fp_edge = l.is_fp_edge;
    c.has_bn = l.has_bn;
    c.in_features = l.in_features;
    c.out_features = l.out_features;
    c.conv = l.conv;
    c.w_latent = BasicTensor<To>(l.w_latent.shape(), cast_vec(l.w_latent.storage()));
    c.w_binary_cache = l.w_binary_cache;
    c.bn.gamma = cast_vec(l.bn.gamma);
    c.bn.beta_shift = cast_vec(l.bn.beta_shift);
    c.bn.running_mean = cast_vec(l.bn.running_mean);
    c.bn.running_var = cast_vec(l.bn.running_var);
    c.bn.momentum = static_cast<To>(l.bn.momentum);
    c.bn.eps = static_cast<To>(l.bn.eps);
    out.layers.push_back(std::move(c));
  }
  return out;
}

#define BNN_INSTANTIATE_NETWORK(T)                                                            \
  template BatchNormOutput<T> batchnorm_forward(BatchNormState<T>&, const BasicTensor<T>&,     \
                                                std::size_t, Mode);                           \
  template BatchNormOutput<T> batchnorm_forward(const BatchNormState<T>&,                     \
                                                const BasicTensor<T>&, std::size_t);          \
  template BatchNormGrads<T> batchnorm_backward(const BatchNormState<T>&,                     \
                                                const BatchNormCache<T>&,                     \
                                                const BasicTensor<T>&);                       \
  template BasicTensor<T> ste_backward(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template T activate(T, bool);                                                               \
  template T activate_grad(T, bool);                                                          \
  template class Network<T>;                                                                  \
  template Network<T> build_network(const ArchSpec&, std::vector<std::size_t>,               \
                                    std::uint64_t);                                           \
  template ForwardResult<T> forward(Network<T>&, const BasicTensor<T>&, Mode);                \
  template ForwardResult<T> forward(const Network<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> sectional_forward(const Network<T>&, const BasicTensor<T>&,         \
                                            std::size_t);                                     \
  template Gradients<T> backward(const Network<T>&, const ForwardCache<T>&,                   \
                                 const BasicTensor<T>&, const std::vector<ActivationTap<T>>&);

BNN_INSTANTIATE_NETWORK(float)
BNN_INSTANTIATE_NETWORK(double)

#undef BNN_INSTANTIATE_NETWORK

template Network<double> convert_network(const Network<float>&);
template Network<float> convert_network(const Network<double>&);
template Network<float> convert_network(const Network<float>&);

}  // namespace bnn
