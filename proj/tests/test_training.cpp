#include <cmath>
#include <filesystem>

#include "bnn/checkpoint.hpp"
#include "bnn/training.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bnn;
using bnn::test::kind_of;
namespace fs = std::filesystem;

namespace {

const DataSplits& tiny_splits() {
  static const DataSplits splits = [] {
    const fs::path dir = test::scratch_dir("train_data");
    write_synth_mnist(dir.string(), 400, 100, 5);
    DataSplits s = load_splits(dir.string(), DataFormat::idx);
    fs::remove_all(dir);
    return s;
  }();
  return splits;
}

CmimConfig tiny_config() {
  CmimConfig c = preset_config("smoke");
  c.arch.widths = {784, 32, 32, 10};
  c.epochs = 3;
  c.batch_size = 32;
  c.n_nce = 16;
  c.diag_samples = 64;
  return c;
}

std::vector<std::string> rows(const Trainer& t) {
  std::vector<std::string> out;
  for (const auto& m : t.history()) out.push_back(metrics_row(m));
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 20, 0.1) == doctest::Approx(0.1));
  CHECK(cosine_lr(10, 20, 0.1) == doctest::Approx(0.05));
  CHECK(cosine_lr(19, 20, 0.1) > 0.0);
  CHECK(cosine_lr(5, 20, 0.1) > cosine_lr(6, 20, 0.1));
}

TEST_CASE("momentum step with decay on weights only") {
  auto net = build_network<double>(ArchSpec{"mlp", {3, 4, 2}, {}, {}, 0}, {1}, 1);
  auto opt = make_optimizer(net, 0.5, 0.1);
  Gradients<double> g;
  for (const auto& layer : net.layers) {
    LayerGrads<double> lg;
    lg.weight = BasicTensor<double>(layer.w_latent.shape(), 1.0);
    lg.gamma.assign(layer.bn.features(), 1.0);
    lg.beta_shift.assign(layer.bn.features(), 1.0);
    g.layers.push_back(lg);
  }
  const double w0 = net.layers[0].w_latent[0];
  const double gamma0 = net.layers[0].bn.gamma[0];
  sgd_step(net, g, opt, 0.1);
  CHECK(net.layers[0].w_latent[0] == doctest::Approx(w0 - 0.1 * (1.0 + 0.1 * w0)));
  CHECK(net.layers[0].bn.gamma[0] == doctest::Approx(gamma0 - 0.1));
  sgd_step(net, g, opt, 0.1);
  CHECK(opt.steps == 2);

  g.layers[1].weight[0] = std::nan("");
  try {
    sgd_step(net, g, opt, 0.1);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("layer2.weight") != std::string::npos);
  }
}

TEST_CASE("metrics header names one column per tap") {
  CHECK(metrics_header({1, 2}) ==
        "epoch,lr,train_loss,cls_loss,cmim_loss,nce_1,nce_2,mi_1,mi_2,mi_diag,train_acc,test_acc\n");
}

TEST_CASE("same seed, same history and checkpoint bytes") {
  Trainer a(tiny_config(), tiny_splits());
  Trainer b(tiny_config(), tiny_splits());
  for (int e = 0; e < 2; ++e) {
    a.run_epoch();
    b.run_epoch();
  }
  CHECK(rows(a) == rows(b));
  CHECK(a.network().layers[1].w_latent == b.network().layers[1].w_latent);
  CheckpointReader ra(a.checkpoint_bytes()), rb(b.checkpoint_bytes());
  CHECK(ra.f32("layer2.weight") == rb.f32("layer2.weight"));
  CHECK(ra.text("rng.nce") == rb.text("rng.nce"));
  CHECK(a.checkpoint_bytes() == b.checkpoint_bytes());
}

TEST_CASE("resuming from a checkpoint continues the same run") {
  Trainer full(tiny_config(), tiny_splits());
  while (!full.finished()) full.run_epoch();

  Trainer first(tiny_config(), tiny_splits());
  first.run_epoch();
  const auto bytes = first.checkpoint_bytes();
  Trainer resumed(tiny_config(), tiny_splits());
  resumed.restore(bytes);
  CHECK(resumed.epochs_done() == 1);
  while (!resumed.finished()) resumed.run_epoch();
  CHECK(rows(resumed) == rows(full));
  for (std::size_t l = 0; l < full.network().depth(); ++l) {
    CHECK(resumed.network().layers[l].w_latent == full.network().layers[l].w_latent);
  }
}

TEST_CASE("checkpoints from another config need force") {
  Trainer a(tiny_config(), tiny_splits());
  a.run_epoch();
  const auto bytes = a.checkpoint_bytes();
  CmimConfig other = tiny_config();
  other.lambda = 0.4;
  Trainer b(other, tiny_splits());
  CHECK(kind_of([&] { b.restore(bytes); }) == ErrorKind::checkpoint);
  CHECK_NOTHROW(b.restore(bytes, true));
}

TEST_CASE("the contrastive terms are tracked per tap") {
  CmimConfig c = tiny_config();
  c.epochs = 2;
  Trainer t(c, tiny_splits());
  const auto e1 = t.run_epoch();
  const auto e2 = t.run_epoch();
  REQUIRE(e2.nce.size() == 2);
  REQUIRE(e2.mi.size() == 2);
  // Anchors only count once their sampled negatives are warm, so the first
  // pass contributes less.
  CHECK(e1.cmim_loss < e2.cmim_loss);
  CHECK(e2.nce[0] > 0.0);
  CHECK(e2.cmim_loss == doctest::Approx(0.5 * e2.nce[0] + e2.nce[1]));
  CHECK(e2.train_loss == doctest::Approx(c.lambda * e2.cmim_loss + e2.cls_loss));
}

TEST_CASE("partition estimate is fixed once and checkpointed") {
  CmimConfig c = tiny_config();
  c.critic_norm = "none";
  Trainer plain(c, tiny_splits());
  plain.run_epoch();
  CheckpointReader rp(plain.checkpoint_bytes());
  CHECK(rp.u8("critic.partition_set", Shape{2}) == std::vector<std::uint8_t>{0, 0});

  c.critic_norm = "estimate";
  Trainer t(c, tiny_splits());
  CheckpointReader r0(t.checkpoint_bytes());
  CHECK(r0.u8("critic.partition_set", Shape{2}) == std::vector<std::uint8_t>{0, 0});
  t.run_epoch();
  CheckpointReader r1(t.checkpoint_bytes());
  CHECK(r1.u8("critic.partition_set", Shape{2}) == std::vector<std::uint8_t>{1, 1});
  const auto lp = r1.f64("critic.log_partition");
  CHECK(std::isfinite(lp[0]));
  CHECK(lp[0] != 0.0);
  t.run_epoch();
  CheckpointReader r2(t.checkpoint_bytes());
  CHECK(r2.f64("critic.log_partition") == lp);
}

TEST_CASE("impossible configurations fail up front") {
  CmimConfig c = tiny_config();
  c.n_nce = 10000;
  CHECK(kind_of([&] { Trainer t(c, tiny_splits()); }) == ErrorKind::config);
  c = tiny_config();
  c.arch.widths = {100, 32, 10};
  c.tap_layers = {1};
  CHECK(kind_of([&] { Trainer t(c, tiny_splits()); }) == ErrorKind::config);
}

TEST_CASE("lambda zero trains without banks") {
  CmimConfig c = tiny_config();
  c.lambda = 0.0;
  c.epochs = 1;
  Trainer t(c, tiny_splits());
  const auto m = t.run_epoch();
  CHECK(m.cmim_loss == 0.0);
  CHECK(m.train_loss == m.cls_loss);
  CHECK_FALSE(CheckpointReader(t.checkpoint_bytes()).has("rng.nce"));
  CHECK(m.test_acc > 10.0);
}

}  // TEST_SUITE
