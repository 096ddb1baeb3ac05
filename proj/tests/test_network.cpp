#include <cmath>

#include "bnn/classification.hpp"
#include "bnn/cmim_loss.hpp"
#include "bnn/network.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace bnn;
using test::network_gradient_error;
using test::random_labels;

namespace {

ArchSpec mlp(std::vector<std::size_t> widths) { return ArchSpec{"mlp", std::move(widths), {}, {}, 0}; }

}  // namespace

TEST_SUITE("network") {

TEST_CASE("architecture flags edges and validates taps") {
  auto net = build_network<float>(mlp({784, 512, 512, 10}), {1, 2}, 0);
  REQUIRE(net.depth() == 3);
  CHECK(net.layers[0].is_fp_edge);
  CHECK_FALSE(net.layers[1].is_fp_edge);
  CHECK(net.layers[2].is_fp_edge);
  CHECK_FALSE(net.layers[2].has_bn);
  CHECK_THROWS_AS(build_network<float>(mlp({784, 512, 10}), {2}, 0), Error);
  CHECK_THROWS_AS(build_network<float>(mlp({784, 512, 10}), {0}, 0), Error);
}

TEST_CASE("same seed builds identical weights") {
  auto a = build_network<float>(mlp({20, 16, 16, 4}), {1, 2}, 5);
  auto b = build_network<float>(mlp({20, 16, 16, 4}), {1, 2}, 5);
  auto c = build_network<float>(mlp({20, 16, 16, 4}), {1, 2}, 6);
  CHECK(a.layers[1].w_latent == b.layers[1].w_latent);
  CHECK_FALSE(a.layers[1].w_latent == c.layers[1].w_latent);
}

TEST_CASE("cached binary activations are the signs of the float activations") {
  Rng rng(1);
  auto net = build_network<float>(mlp({30, 40, 24, 5}), {1, 2}, 2);
  const auto x = test::random_tensor<float>(Shape{16, 30}, rng);
  for (Mode mode : {Mode::train, Mode::eval}) {
    const auto res = forward(net, x, mode);
    for (std::size_t l = 0; l + 1 < net.depth(); ++l) {
      CHECK(res.cache.layers[l].a_bin == sign_binarize(res.cache.layers[l].a_fp));
      CHECK(res.cache.layers[l].a_act == unpack<float>(res.cache.layers[l].a_bin));
    }
  }
}

TEST_CASE("hidden layers run on the packed kernel and match float arithmetic") {
  Rng rng(4);
  auto net = build_network<double>(mlp({12, 70, 66, 3}), {1, 2}, 9);
  const auto x = test::random_tensor<double>(Shape{5, 12}, rng);
  const auto res = forward(std::as_const(net), x);
  const auto& lc = res.cache.layers[1];
  const auto ref = fp_matmul_nt(lc.input, lc.weights);
  CHECK(lc.pre_bn == ref);
}

TEST_CASE("eval forward leaves batch-norm state alone, train forward updates it") {
  Rng rng(2);
  auto net = build_network<float>(mlp({10, 8, 8, 3}), {1}, 3);
  const auto x = test::random_tensor<float>(Shape{6, 10}, rng, 0.0, 2.0);
  const auto before = net.layers[0].bn.running_mean;
  forward(net, x, Mode::eval);
  CHECK(net.layers[0].bn.running_mean == before);
  forward(net, x, Mode::train);
  CHECK_FALSE(net.layers[0].bn.running_mean == before);
}

TEST_CASE("train-mode batch norm standardizes each channel") {
  Rng rng(8);
  BatchNormState<double> bn(3);
  const auto x = test::random_tensor<double>(Shape{10, 6}, rng, -3.0, 5.0);
  const auto out = batchnorm_forward(bn, x, 2, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < 10; ++b)
      for (std::size_t s = 0; s < 2; ++s) {
        const double v = out.y(b, c * 2 + s);
        mean += v;
        sq += v * v;
      }
    CHECK(mean / 20.0 == doctest::Approx(0.0).epsilon(1e-9).scale(1.0));
    CHECK(sq / 20.0 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batch-norm backward matches finite differences") {
  Rng rng(21);
  for (std::size_t spatial : {1u, 3u}) CHECK(test::batchnorm_gradient_error(rng, spatial) < 1e-4);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(5);
  CHECK(test::cross_entropy_gradient_error(rng) < 1e-4);
  const auto logits = test::random_tensor<double>(Shape{6, 4}, rng);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0, 1}), Error);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0, 1, 2, 3, 4, 0}), Error);
}

TEST_CASE("cross-entropy is stable for huge logits") {
  FpTensor logits(Shape{1, 3}, std::vector<float>{1e30f, -1e30f, 0.0f});
  const auto ce = softmax_cross_entropy(logits, std::vector<int>{1});
  CHECK(std::isfinite(ce.loss));
  CHECK(ce.grad.all_finite());
}

TEST_CASE("straight-through estimator passes gradient inside the clip window only") {
  FpTensor pre(Shape{1, 5}, std::vector<float>{-2.0f, -1.0f, 0.0f, 1.0f, 1.5f});
  FpTensor g(Shape{1, 5}, 3.0f);
  const auto out = ste_backward(g, pre);
  CHECK(out == FpTensor(Shape{1, 5}, std::vector<float>{0.0f, 3.0f, 3.0f, 3.0f, 0.0f}));
  CHECK(activate(0.0f, false) == 1.0f);
  CHECK(activate(-0.0f, false) == 1.0f);
  CHECK(activate(-1e-9f, false) == -1.0f);
}

TEST_CASE("soft-mode network gradients match finite differences on a 4-8-6-3 net") {
  CHECK(test::soft_mlp_gradient_error(13) < 1e-3);
}

TEST_CASE("soft-mode conv network gradients match finite differences") {
  Rng rng(23);
  ArchSpec arch{"conv", {}, {2, 5, 5}, {{3, 1}, {4, 2}}, 3};
  auto net = build_network<double>(arch, {1, 2}, 4);
  net.soft_mode = true;
  for (auto& layer : net.layers)
    for (auto& w : layer.w_latent.data()) w *= 0.2;
  const auto x = test::random_tensor<double>(Shape{4, 50}, rng);
  const auto labels = random_labels(4, 3, rng);
  auto loss = [&] { return softmax_cross_entropy(forward(net, x, Mode::train).logits, labels).loss; };
  const auto step = classification_step(net, x, labels);
  CHECK(network_gradient_error(net, step.grads, loss) < 1e-3);
}

TEST_CASE("injected activation gradients reach the weights") {
  Rng rng(31);
  auto net = build_network<double>(mlp({4, 8, 6, 3}), {1, 2}, 2);
  net.soft_mode = true;
  for (auto& layer : net.layers)
    for (auto& w : layer.w_latent.data()) w *= 0.2;
  const auto x = test::random_tensor<double>(Shape{6, 4}, rng);
  const auto labels = random_labels(6, 3, rng);
  const auto r_fp = test::random_tensor<double>(Shape{6, 8}, rng);
  const auto r_act = test::random_tensor<double>(Shape{6, 6}, rng);
  // loss = CE + <r_fp, a_fp^1> + <r_act, a_act^2>
  auto loss = [&] {
    const auto res = forward(net, x, Mode::train);
    double v = softmax_cross_entropy(res.logits, labels).loss;
    for (std::size_t i = 0; i < r_fp.size(); ++i) v += r_fp[i] * res.cache.layers[0].a_fp[i];
    for (std::size_t i = 0; i < r_act.size(); ++i) v += r_act[i] * res.cache.layers[1].a_act[i];
    return v;
  };
  const auto res = forward(net, x, Mode::train);
  const auto ce = softmax_cross_entropy(res.logits, labels);
  std::vector<ActivationTap<double>> taps(3);
  taps[0].grad_a_fp = r_fp;
  taps[1].grad_a_bin = r_act;
  const auto grads = backward(net, res.cache, ce.grad, taps);
  CHECK(network_gradient_error(net, grads, loss) < 1e-3);
}

TEST_CASE("full contrastive objective gradients match finite differences in soft mode") {
  Rng rng(41);
  auto net = build_network<double>(mlp({5, 8, 6, 3}), {1, 2}, 8);
  net.soft_mode = true;
  for (auto& layer : net.layers)
    for (auto& w : layer.w_latent.data()) w *= 0.2;
  const std::size_t n_data = 12;
  const auto x = test::random_tensor<double>(Shape{4, 5}, rng);
  const auto labels = random_labels(4, 3, rng);
  const std::vector<std::size_t> indices{0, 3, 7, 11};
  std::vector<MemoryBank<double>> banks;
  for (std::size_t width : {8u, 6u}) {
    MemoryBank<double> bank(n_data, width);
    std::vector<std::size_t> all(n_data);
    for (std::size_t i = 0; i < n_data; ++i) all[i] = i;
    bank.update(all, test::random_tensor<double>(Shape{n_data, width}, rng));
    banks.push_back(std::move(bank));
  }
  ObjectiveConfig oc;
  oc.lambda = 0.8;
  oc.beta = 2.0;
  oc.critic = CriticParams{0.7, 3, n_data};
  auto loss = [&] {
    Rng r(99);
    return cmim_objective(net, x, labels, indices, banks, oc, r).report.total;
  };
  Rng r(99);
  const auto res = cmim_objective(net, x, labels, indices, banks, oc, r);
  CHECK(res.report.nce.size() == 2);
  CHECK(network_gradient_error(net, res.grads, loss) < 1e-3);

  // Detached: batch-norm affine gradients come from the cross-entropy only.
  oc.detach_affine = true;
  Rng r2(99);
  const auto detached = cmim_objective(net, x, labels, indices, banks, oc, r2);
  const auto cls = classification_step(net, x, labels);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(detached.grads.layers[l].gamma == cls.grads.layers[l].gamma);
    CHECK(detached.grads.layers[l].beta_shift == cls.grads.layers[l].beta_shift);
    CHECK(detached.grads.layers[l].weight == res.grads.layers[l].weight);
    CHECK_FALSE(res.grads.layers[l].gamma == cls.grads.layers[l].gamma);
  }
}

TEST_CASE("sectional forward returns the float activation of layer k") {
  Rng rng(6);
  auto net = build_network<float>(mlp({10, 12, 9, 4}), {1, 2}, 1);
  const auto x = test::random_tensor<float>(Shape{3, 10}, rng);
  const auto full = forward(std::as_const(net), x);
  CHECK(sectional_forward(net, x, 1) == full.cache.layers[0].a_fp);
  CHECK(sectional_forward(net, x, 2) == full.cache.layers[1].a_fp);
  CHECK(sectional_forward(net, x, 3) == full.logits);
  CHECK_THROWS_AS(sectional_forward(net, x, 4), Error);
}

TEST_CASE("forward rejects a mismatched input width") {
  auto net = build_network<float>(mlp({10, 12, 4}), {1}, 1);
  CHECK_THROWS_AS(forward(std::as_const(net), FpTensor(Shape{2, 11})), Error);
  CHECK_THROWS_AS(forward(net, FpTensor(Shape{1, 10}), Mode::train), Error);
}

}  // TEST_SUITE
