#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner. Everything here is written from the definitions, not
// from the library code paths it is compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bnn/classification.hpp"
#include "bnn/cmim_loss.hpp"
#include "bnn/mi.hpp"
#include "bnn/network.hpp"
#include "test_util.hpp"

namespace bnn::test {

// All 2^length sign patterns, row p holding the bits of p.
inline BitTensor pattern_rows(std::size_t length) {
  const std::size_t n = std::size_t{1} << length;
  BitTensor bits(Shape{n, length});
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < length; ++c) bits.set(p, c, (p >> c) & 1u);
  }
  return bits;
}

inline std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

inline std::vector<double> signs_of(const std::vector<double>& v) {
  std::vector<double> s(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) s[i] = v[i] >= 0.0 ? 1.0 : -1.0;
  return s;
}

// h written out directly from its definition; only valid for moderate s / tau.
inline double naive_h(double s, const CriticParams& p) {
  const double e = std::exp(s / p.tau);
  const double noise = std::exp(p.log_partition) * static_cast<double>(p.n_negatives) /
                       static_cast<double>(p.m_pairs);
  return e / (e + noise);
}

struct NceInstance {
  BasicTensor<double> anchors, positives;
  std::vector<std::size_t> indices;
  MemoryBank<double> bank;
  CriticParams params;
};

// Batch <= 8, N <= 4, fully warm bank.
inline NceInstance random_nce_instance(Rng& rng) {
  const std::size_t batch = 1 + rng.below(8);
  const std::size_t dim = 1 + rng.below(6);
  const std::size_t n_neg = 1 + rng.below(4);
  const std::size_t slots = std::max<std::size_t>(batch, n_neg + 1) + rng.below(6);
  NceInstance in;
  in.positives = random_tensor<double>(Shape{batch, dim}, rng);
  in.anchors = BasicTensor<double>(Shape{batch, dim});
  for (std::size_t i = 0; i < in.anchors.size(); ++i) in.anchors[i] = in.positives[i] >= 0 ? 1.0 : -1.0;
  std::vector<std::size_t> all(slots);
  for (std::size_t i = 0; i < slots; ++i) all[i] = i;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t j = i + rng.below(slots - i);
    std::swap(all[i], all[j]);
    in.indices.push_back(all[i]);
  }
  for (std::size_t i = 0; i < slots; ++i) all[i] = i;
  in.bank = MemoryBank<double>(slots, dim);
  in.bank.update(all, random_tensor<double>(Shape{slots, dim}, rng));
  in.params = CriticParams{0.5 + 2.0 * rng.uniform(), n_neg, slots + rng.below(20)};
  return in;
}

// -(1/B) sum_i [log h(i,i) + sum_j log(1 - h(i,j))] using the negatives the
// bank would draw from `rng`.
inline double brute_force_nce(const NceInstance& in, Rng rng) {
  double total = 0.0;
  const std::size_t B = in.anchors.rows();
  for (std::size_t i = 0; i < B; ++i) {
    const auto negs = in.bank.sample_negatives(in.indices[i], in.params.n_negatives, rng);
    double s = 0.0;
    for (std::size_t d = 0; d < in.anchors.cols(); ++d) s += in.anchors(i, d) * in.positives(i, d);
    double term = std::log(naive_h(s, in.params));
    for (auto j : negs) {
      const auto row = in.bank.read(j);
      double sn = 0.0;
      for (std::size_t d = 0; d < row.size(); ++d) sn += in.anchors(i, d) * row[d];
      term += std::log(1.0 - naive_h(sn, in.params));
    }
    total += term;
  }
  return -total / static_cast<double>(B);
}

// Strictly positive random counts on an nx x ny grid.
inline JointHistogram random_joint(Rng& rng, std::size_t nx, std::size_t ny) {
  std::vector<double> counts(nx * ny);
  for (auto& c : counts) c = 0.05 + rng.uniform();
  return JointHistogram::from_counts(nx, ny, counts);
}

// Max relative error of an analytic gradient against central differences over
// every parameter of the network.
inline double network_gradient_error(Network<double>& net, const Gradients<double>& grads,
                                     const std::function<double()>& loss) {
  double worst = 0.0;
  auto check = [&](const std::function<std::span<double>()>& params, std::span<const double> analytic) {
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double fd = central_difference_at([&]() -> double& { return params()[i]; }, 1e-6, loss);
      worst = std::max(worst, rel_error(analytic[i], fd, 1e-6));
    }
  };
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& g = grads.layers[l];
    check([&] { return net.layers[l].w_latent.data(); }, g.weight.data());
    if (net.layers[l].has_bn) {
      check([&] { return std::span<double>(net.layers[l].bn.gamma); }, g.gamma);
      check([&] { return std::span<double>(net.layers[l].bn.beta_shift); }, g.beta_shift);
    }
  }
  return worst;
}

// Soft-mode 4-8-6-3 MLP, cross-entropy on 8 samples: worst relative error of
// the full backward pass.
inline double soft_mlp_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  auto net = build_network<double>(ArchSpec{"mlp", {4, 8, 6, 3}, {}, {}, 0}, {1, 2}, seed + 4);
  net.soft_mode = true;
  // Latent weights near zero keep tanh(10 w) away from saturation.
  for (auto& layer : net.layers)
    for (auto& w : layer.w_latent.data()) w *= 0.2;
  const auto x = random_tensor<double>(Shape{8, 4}, rng);
  const auto labels = random_labels(8, 3, rng);
  auto loss = [&] { return softmax_cross_entropy(forward(net, x, Mode::train).logits, labels).loss; };
  const auto step = classification_step(net, x, labels);
  return network_gradient_error(net, step.grads, loss);
}

// Train-mode batch norm on a 5 x (4 * spatial) input against a random linear
// readout: worst relative error over input, gamma and shift gradients.
inline double batchnorm_gradient_error(Rng& rng, std::size_t spatial) {
  BatchNormState<double> bn(4);
  for (auto& g : bn.gamma) g = 0.5 + rng.uniform();
  for (auto& b : bn.beta_shift) b = rng.uniform() - 0.5;
  auto x = random_tensor<double>(Shape{5, 4 * spatial}, rng, -2.0, 2.0);
  const auto r = random_tensor<double>(x.shape(), rng);
  auto loss = [&] {
    BatchNormState<double> s = bn;
    const auto y = batchnorm_forward(s, x, spatial, Mode::train).y;
    double v = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) v += y[i] * r[i];
    return v;
  };
  BatchNormState<double> s = bn;
  const auto out = batchnorm_forward(s, x, spatial, Mode::train);
  const auto g = batchnorm_backward(bn, out.cache, r);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, rel_error(g.grad_x[i], central_difference(x.data(), i, 1e-6, loss)));
  }
  for (std::size_t c = 0; c < 4; ++c) {
    worst = std::max(worst, rel_error(g.grad_gamma[c], central_difference(std::span(bn.gamma), c, 1e-6, loss)));
    worst = std::max(worst, rel_error(g.grad_beta_shift[c],
                                      central_difference(std::span(bn.beta_shift), c, 1e-6, loss)));
  }
  return worst;
}

// Softmax cross-entropy on 6 x 4 logits: worst relative error of the gradient.
inline double cross_entropy_gradient_error(Rng& rng) {
  auto logits = random_tensor<double>(Shape{6, 4}, rng, -3.0, 3.0);
  const auto labels = random_labels(6, 4, rng);
  const auto ce = softmax_cross_entropy(logits, labels);
  auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
  double worst = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    worst = std::max(worst, rel_error(ce.grad[i], central_difference(logits.data(), i, 1e-6, loss)));
  }
  return worst;
}

}  // namespace bnn::test
