#include <cmath>
#include <limits>
#include <set>

#include "bnn/cmim_loss.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace bnn;

using test::brute_force_nce;
using test::naive_h;
using test::signs_of;
using Instance = test::NceInstance;
Instance random_instance(Rng& rng) { return test::random_nce_instance(rng); }

TEST_SUITE("cmim") {

TEST_CASE("worked example: sign agreement and activation flips") {
  const std::vector<double> fp{0.3, -0.4, -0.6};
  const std::vector<double> other{0.6, -0.9, 0.7};
  const auto anchor = signs_of(fp);
  CHECK(anchor == std::vector<double>{1.0, -1.0, -1.0});
  const double pos = fixed_dot<double>(anchor, fp);
  const double neg = fixed_dot<double>(anchor, other);
  // Decimal inputs carry binary rounding; agreement is to the last bits.
  CHECK(std::abs(pos - 1.3) <= 4 * std::numeric_limits<double>::epsilon());
  CHECK(std::abs(neg - 0.8) <= 4 * std::numeric_limits<double>::epsilon());
  CHECK(pos == l1_norm<double>(fp));
  // One flipped sign costs twice that coordinate's magnitude.
  const std::vector<double> flipped{0.6, -0.9, -0.7};
  CHECK(neg == doctest::Approx(fixed_dot<double>(anchor, flipped) - 2 * 0.7).epsilon(1e-15));
}

TEST_CASE("positive score equals the L1 norm exactly") {
  Rng rng(1);
  for (std::size_t dim : {1u, 3u, 4u, 7u, 512u, 1000u}) {
    const auto a = test::random_tensor<float>(Shape{dim}, rng, -5.0, 5.0);
    std::vector<float> s(dim);
    for (std::size_t i = 0; i < dim; ++i) s[i] = a[i] >= 0.0f ? 1.0f : -1.0f;
    CHECK(fixed_dot<float>(s, a.data()) == l1_norm<float>(a.data()));
  }
}

TEST_CASE("critic is finite, monotone and agrees with the direct formula") {
  CriticParams p{0.1, 16, 1000};
  double last = -std::numeric_limits<double>::infinity();
  for (double s = -3.0; s <= 3.0; s += 0.01) {
    const auto c = critic_from_score(s, p);
    CHECK(c.log_h <= 0.0);
    CHECK(c.log_h > last);
    last = c.log_h;
    CHECK(std::exp(c.log_h) == doctest::Approx(naive_h(s, p)).epsilon(1e-9));
    CHECK(std::exp(c.log_1mh) == doctest::Approx(1.0 - naive_h(s, p)).epsilon(1e-9));
  }
  for (double s : {-1e8, 1e8}) {
    const auto c = critic_from_score(s, p);
    CHECK(std::isfinite(c.log_h));
    CHECK(std::isfinite(c.log_1mh));
  }
  CriticParams z = p;
  z.log_partition = 1.7;
  CHECK(std::exp(critic_from_score(0.2, z).log_h) == doctest::Approx(naive_h(0.2, z)).epsilon(1e-12));
}

TEST_CASE("critic parameters are validated") {
  CHECK_THROWS_AS((CriticParams{0.0, 1, 10}.validate()), Error);
  CHECK_THROWS_AS((CriticParams{0.1, 0, 10}.validate()), Error);
  CHECK_THROWS_AS((CriticParams{0.1, 11, 10}.validate()), Error);
  CHECK_NOTHROW((CriticParams{0.1, 10, 10}.validate()));
  CHECK_THROWS_AS(critic_log_scores<float>(std::vector<float>(3), std::vector<float>(4), CriticParams{}),
                  Error);
}

TEST_CASE("negatives are distinct and never the anchor") {
  MemoryBank<float> bank(50, 2);
  Rng rng(3);
  std::vector<std::size_t> hits(50, 0);
  for (std::size_t trial = 0; trial < 2000; ++trial) {
    const auto negs = bank.sample_negatives(17, 10, rng);
    REQUIRE(negs.size() == 10);
    CHECK(std::set<std::size_t>(negs.begin(), negs.end()).size() == 10);
    for (auto j : negs) {
      CHECK(j != 17);
      CHECK(j < 50);
      ++hits[j];
    }
  }
  CHECK(hits[17] == 0);
  // Every other slot is drawn with probability 10/49 per trial.
  for (std::size_t j = 0; j < 50; ++j) {
    if (j != 17) CHECK(std::abs(static_cast<double>(hits[j]) - 2000.0 * 10 / 49) < 80.0);
  }
  const auto all = bank.sample_negatives(0, 49, rng);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 49);
  CHECK_THROWS_AS(bank.sample_negatives(0, 50, rng), Error);
}

TEST_CASE("bank update writes rows and marks them warm") {
  MemoryBank<float> bank(4, 2);
  CHECK_FALSE(bank.all_initialized());
  const std::vector<std::size_t> idx{2, 0};
  bank.update(idx, FpTensor(Shape{2, 2}, std::vector<float>{1, 2, 3, 4}));
  CHECK(bank.initialized(2));
  CHECK_FALSE(bank.initialized(1));
  CHECK(bank.read(0)[1] == 4.0f);
  CHECK(bank.read(2)[0] == 1.0f);
  CHECK_THROWS_AS(bank.update(idx, FpTensor(Shape{2, 3})), Error);
  const std::vector<std::size_t> bad{9};
  CHECK_THROWS_AS(bank.update(bad, FpTensor(Shape{1, 2})), Error);
}

TEST_CASE("NCE loss matches the brute-force sum on random micro-instances") {
  Rng gen(2024);
  for (int trial = 0; trial < 50; ++trial) {
    Instance in = random_instance(gen);
    const std::uint64_t seed = gen.next();
    Rng rng(seed);
    const auto res = nce_layer_loss(in.anchors, in.positives, in.indices, in.bank, in.params, rng);
    CHECK(res.active_anchors == in.anchors.rows());
    CHECK(std::abs(res.loss - brute_force_nce(in, Rng(seed))) <= 1e-10);
  }
}

TEST_CASE("NCE gradients match finite differences of the brute-force loss") {
  Rng gen(77);
  for (int trial = 0; trial < 10; ++trial) {
    Instance in = random_instance(gen);
    const std::uint64_t seed = gen.next();
    Rng rng(seed);
    const auto res = nce_layer_loss(in.anchors, in.positives, in.indices, in.bank, in.params, rng);
    auto loss = [&] { return brute_force_nce(in, Rng(seed)); };
    for (std::size_t i = 0; i < in.positives.size(); ++i) {
      CHECK(test::central_difference(in.positives.data(), i, 1e-6, loss) ==
            doctest::Approx(res.grad_fp[i]).epsilon(1e-6).scale(1.0));
      CHECK(test::central_difference(in.anchors.data(), i, 1e-6, loss) ==
            doctest::Approx(res.grad_anchor[i]).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("log mean exp covers every scored pair") {
  Rng gen(5);
  Instance in = random_instance(gen);
  Rng rng(1), replay(1);
  const auto res = nce_layer_loss(in.anchors, in.positives, in.indices, in.bank, in.params, rng);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < in.anchors.rows(); ++i) {
    const auto negs = in.bank.sample_negatives(in.indices[i], in.params.n_negatives, replay);
    double s = 0.0;
    for (std::size_t d = 0; d < in.anchors.cols(); ++d) s += in.anchors(i, d) * in.positives(i, d);
    sum += std::exp(s / in.params.tau);
    ++count;
    for (auto j : negs) {
      const auto row = in.bank.read(j);
      double sn = 0.0;
      for (std::size_t d = 0; d < row.size(); ++d) sn += in.anchors(i, d) * row[d];
      sum += std::exp(sn / in.params.tau);
      ++count;
    }
  }
  CHECK(res.log_mean_exp == doctest::Approx(std::log(sum / static_cast<double>(count))).epsilon(1e-12));
}

TEST_CASE("cold memory-bank slots follow the warm-up policy") {
  MemoryBank<double> bank(6, 2);
  const std::vector<std::size_t> idx{0, 1};
  bank.update(idx, BasicTensor<double>(Shape{2, 2}, 0.5));
  BasicTensor<double> a(Shape{2, 2}, 1.0), f(Shape{2, 2}, 0.5);
  CriticParams p{1.0, 3, 6};
  Rng rng(1);
  CHECK_THROWS_AS(nce_layer_loss(a, f, idx, bank, p, rng, WarmPolicy::strict), Error);
  try {
    nce_layer_loss(a, f, idx, bank, p, rng, WarmPolicy::strict);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::bank_not_warm);
  }
  const auto res = nce_layer_loss(a, f, idx, bank, p, rng, WarmPolicy::skip_cold);
  CHECK(res.active_anchors == 0);
  CHECK(res.loss == 0.0);
  CHECK(res.grad_fp == BasicTensor<double>(Shape{2, 2}));
}

TEST_CASE("NCE rejects mismatched shapes") {
  MemoryBank<double> bank(6, 3);
  const std::vector<std::size_t> idx{0, 1};
  Rng rng(1);
  CriticParams p{1.0, 2, 6};
  CHECK_THROWS_AS(nce_layer_loss(BasicTensor<double>(Shape{2, 2}), BasicTensor<double>(Shape{2, 2}),
                                 idx, bank, p, rng),
                  Error);
  CHECK_THROWS_AS(nce_layer_loss(BasicTensor<double>(Shape{2, 3}), BasicTensor<double>(Shape{2, 2}),
                                 idx, bank, p, rng),
                  Error);
}

TEST_CASE("layer weights favor deeper layers") {
  CHECK(layer_weight(1, 2.0, 3) == 0.5);
  CHECK(layer_weight(2, 2.0, 3) == 1.0);
  CHECK(layer_weight(1, 4.0, 4) == 1.0 / 16.0);
  CHECK_THROWS_AS(layer_weight(1, 1.0, 3), Error);
  const std::vector<double> nce{2.0, 3.0};
  CHECK(cmim_total(nce, 0.25, 0.8, 2.0, 3) == doctest::Approx(0.8 * (2.0 * 0.5 + 3.0) + 0.25));
  CHECK(cmim_total(nce, 0.25, 0.0, 2.0, 3) == 0.25);
  const std::vector<std::size_t> bad{0, 1};
  CHECK_THROWS_AS(cmim_total(nce, bad, 0.0, 0.8, 2.0, 3), Error);
}

TEST_CASE("conv embeddings pool over spatial positions") {
  const std::vector<float> act{1, 2, 3, 4, 10, 20, 30, 40};
  const auto pooled = pool_embedding<float>(act, 2, 4);
  CHECK(pooled == std::vector<float>{2.5f, 25.0f});
  CHECK(pool_embedding<float>(act, 8, 1) == act);
  CHECK_THROWS_AS(pool_embedding<float>(act, 3, 4), Error);
}

}  // TEST_SUITE
