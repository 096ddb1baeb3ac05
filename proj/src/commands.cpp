#include "bnn/commands.hpp"

#include <spawn.h>
#include <sys/wait.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "bnn/mi.hpp"
#include "bnn/parallel.hpp"
#include "bnn/training.hpp"
#include "json.hpp"

extern char** environ;

namespace bnn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::data, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorKind::data, "write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::data, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void apply_threads(const CmimConfig& c) {
  if (c.threads > 0) set_worker_count(c.threads);
}

std::string metrics_csv(const Trainer& t) {
  std::string csv = metrics_header(t.network().tap_layers);
  for (const auto& m : t.history()) csv += metrics_row(m);
  return csv;
}

// Rows of an existing timing.csv up to and including `epochs`, header first.
std::string kept_timing(const fs::path& path, std::size_t epochs) {
  std::string csv = "epoch,seconds\n";
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return csv;
  while (std::getline(in, line)) {
    std::size_t epoch = 0;
    const auto [end, ec] = std::from_chars(line.data(), line.data() + line.size(), epoch);
    if (ec == std::errc() && end != line.data() && epoch <= epochs) csv += line + "\n";
  }
  return csv;
}

// Mean over spatial positions of activate(a_fp) for one layer.
FpTensor binary_embeddings(const Network<float>& net, const ForwardCache<float>& cache,
                           std::size_t k) {
  const Layer<float>& layer = net.layers[k - 1];
  const FpTensor& act = cache.layers[k - 1].a_act;
  const std::size_t channels = layer.bn_channels();
  const std::size_t spatial = layer.spatial();
  if (spatial == 1) return act;
  FpTensor out(Shape{act.rows(), channels});
  for (std::size_t b = 0; b < act.rows(); ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (std::size_t s = 0; s < spatial; ++s) sum += act(b, c * spatial + s);
      out(b, c) = static_cast<float>(sum / static_cast<double>(spatial));
    }
  }
  return out;
}

struct CellResult {
  std::string status = "ok";
  double final_test_acc = 0.0;
  double best_test_acc = 0.0;
  double final_train_loss = 0.0;
  std::size_t epochs = 0;
};

CellResult read_cell_metrics(const fs::path& dir) {
  CellResult r;
  std::istringstream in(read_text(dir / "metrics.csv"));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    for (std::string col; std::getline(h, col, ',');) header.push_back(col);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::map<std::string, double> row;
    std::istringstream fields(line);
    std::size_t i = 0;
    for (std::string f; std::getline(fields, f, ',') && i < header.size(); ++i) {
      row[header[i]] = std::stod(f);
    }
    r.final_test_acc = row["test_acc"];
    r.best_test_acc = std::max(r.best_test_acc, r.final_test_acc);
    r.final_train_loss = row["train_loss"];
    ++r.epochs;
  }
  return r;
}

std::string status_from_exit(int code) {
  switch (code) {
    case 2:
      return "error:config";
    case 3:
      return "error:data";
    case 4:
      return "error:numeric";
    default:
      return "error:exit" + std::to_string(code);
  }
}

}  // namespace

std::string error_json(std::string_view category, const std::string& message) {
  return json{{"error", std::string(category)}, {"message", message}}.dump();
}

CmimConfig resolve_config(const std::string& config_path, const std::string& preset,
                          const std::vector<std::string>& overrides) {
  CmimConfig c = config_path.empty() ? preset_config(preset.empty() ? "desk" : preset)
                                     : load_config(config_path);
  apply_overrides(c, overrides);
  c.validate();
  return c;
}

int cmd_train(const TrainOptions& options) {
  const CmimConfig& config = options.config;
  config.validate();
  apply_threads(config);
  const fs::path out(config.out_dir);
  fs::create_directories(out);
  write_text(out / "resolved-config.json", config_to_json(config) + "\n");

  auto splits = load_splits(config.data_dir, parse_data_format(config.data_format),
                            config.train_per_class, config.test_per_class);
  Trainer trainer(config, std::move(splits));
  const fs::path ckpt = out / "checkpoint.bnnc";
  if (options.resume && fs::exists(ckpt)) {
    trainer.load_checkpoint(ckpt.string(), options.force);
    if (!options.quiet) {
      std::cout << "resumed from " << ckpt.string() << " at epoch " << trainer.epochs_done() << "\n";
    }
  }
  std::string timing = options.resume ? kept_timing(out / "timing.csv", trainer.epochs_done())
                                      : std::string("epoch,seconds\n");
  write_text(out / "timing.csv", timing);
  while (!trainer.finished()) {
    if (config.stop_after > 0 && trainer.epochs_done() >= config.stop_after) break;
    const EpochMetrics m = trainer.run_epoch();
    timing += std::to_string(m.epoch) + "," + fmt(m.seconds) + "\n";
    write_text(out / "metrics.csv", metrics_csv(trainer));
    write_text(out / "timing.csv", timing);
    const bool periodic = config.checkpoint_every > 0 && m.epoch % config.checkpoint_every == 0;
    const bool stopping = config.stop_after > 0 && m.epoch == config.stop_after;
    if (periodic || stopping) trainer.save_checkpoint(ckpt.string());
    if (!options.quiet) {
      std::printf("epoch %zu/%zu  lr %.4f  loss %.4f  cls %.4f  cmim %.4f  mi %.4f  train %.2f%%  test %.2f%%  (%.1fs)\n",
                  m.epoch, config.epochs, m.lr, m.train_loss, m.cls_loss, m.cmim_loss, m.mi_diag,
                  m.train_acc, m.test_acc, m.seconds);
      std::fflush(stdout);
    }
  }
  if (trainer.finished()) {
    trainer.save_checkpoint(ckpt.string());
    trainer.save_checkpoint((out / "final.bnnc").string());
  }
  write_text(out / "metrics.csv", metrics_csv(trainer));
  return 0;
}

int cmd_eval(const EvalOptions& options) {
  const LoadedModel model = load_model(options.checkpoint);
  const std::string dir = options.data_dir.empty() ? model.config.data_dir : options.data_dir;
  const Dataset test = load_test_split(model.config, dir, model.norm);
  const EvalResult r = evaluate(model.net, test);
  const json out{{"checkpoint", options.checkpoint},
                 {"epoch", model.epochs_done},
                 {"top1_accuracy", r.accuracy},
                 {"loss", r.loss},
                 {"correct", r.correct},
                 {"total", r.total}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const SweepOptions& options) {
  require(options.param == "lambda" || options.param == "n_nce", ErrorKind::config,
          "sweep param must be lambda or n_nce");
  require(!options.values.empty(), ErrorKind::config, "sweep needs at least one value");
  const CmimConfig& base = options.config;
  base.validate();
  // Parse every value before running anything.
  std::vector<CmimConfig> cells;
  for (std::size_t i = 0; i < options.values.size(); ++i) {
    CmimConfig c = base;
    apply_override(c, options.param + "=" + options.values[i]);
    c.seed = base.seed + i * options.seed_stride;
    c.out_dir = (fs::path(base.out_dir) / ("cell-" + std::to_string(i) + "-" + options.param + "-" +
                                            options.values[i]))
                    .string();
    c.validate();
    cells.push_back(c);
  }
  fs::create_directories(base.out_dir);
  std::vector<CellResult> results(cells.size());

  if (options.jobs <= 1 || options.executable.empty()) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        TrainOptions t;
        t.config = cells[i];
        t.quiet = true;
        cmd_train(t);
        results[i] = read_cell_metrics(cells[i].out_dir);
      } catch (const Error& e) {
        results[i].status = "error:" + std::string(to_string(e.kind()));
        std::cerr << error_json(to_string(e.kind()), e.what()) << "\n";
      }
      std::printf("cell %zu %s=%s  %s  test %.2f%%\n", i, options.param.c_str(),
                  options.values[i].c_str(), results[i].status.c_str(), results[i].final_test_acc);
      std::fflush(stdout);
    }
  } else {
    std::map<pid_t, std::size_t> running;
    std::size_t next = 0;
    auto reap_one = [&] {
      int status = 0;
      const pid_t pid = waitpid(-1, &status, 0);
      const auto it = running.find(pid);
      if (it == running.end()) return;
      const std::size_t i = it->second;
      running.erase(it);
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
      if (code == 0) {
        results[i] = read_cell_metrics(cells[i].out_dir);
      } else {
        results[i].status = status_from_exit(code);
      }
      std::printf("cell %zu %s=%s  %s  test %.2f%%\n", i, options.param.c_str(),
                  options.values[i].c_str(), results[i].status.c_str(), results[i].final_test_acc);
      std::fflush(stdout);
    };
    while (next < cells.size() || !running.empty()) {
      if (next < cells.size() && running.size() < options.jobs) {
        fs::create_directories(cells[next].out_dir);
        const std::string cfg = (fs::path(cells[next].out_dir) / "cell-config.json").string();
        write_text(cfg, config_to_json(cells[next]) + "\n");
        std::vector<std::string> args{options.executable, "train", "--config", cfg, "--quiet"};
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        pid_t pid = 0;
        if (posix_spawn(&pid, options.executable.c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
          results[next].status = "error:spawn";
        } else {
          running[pid] = next;
        }
        ++next;
      } else {
        reap_one();
      }
    }
  }

  std::string csv = "cell,param,value,seed,status,epochs,final_test_acc,best_test_acc,final_train_loss,out_dir\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& r = results[i];
    csv += std::to_string(i) + "," + options.param + "," + options.values[i] + "," +
           std::to_string(cells[i].seed) + "," + r.status + "," + std::to_string(r.epochs) + "," +
           fmt(r.final_test_acc) + "," + fmt(r.best_test_acc) + "," + fmt(r.final_train_loss) + "," +
           cells[i].out_dir + "\n";
  }
  write_text(fs::path(base.out_dir) / "sweep.csv", csv);
  return 0;
}

int cmd_analyze(const AnalyzeOptions& options) {
  require(options.checkpoint.empty() != options.config_path.empty(), ErrorKind::config,
          "analyze needs exactly one of --ckpt or --config");
  require(!options.out_dir.empty(), ErrorKind::config, "analyze needs --out");
  require(options.max_samples >= 2, ErrorKind::config, "analyze needs at least 2 samples");
  CmimConfig config;
  Network<float> net;
  Normalization norm;
  std::string source;
  if (!options.checkpoint.empty()) {
    LoadedModel m = load_model(options.checkpoint);
    config = m.config;
    net = std::move(m.net);
    norm = m.norm;
    source = options.checkpoint;
  } else {
    config = resolve_config(options.config_path, "", options.overrides);
    net = build_network<float>(config.arch, config.tap_layers, derive_seed(config.seed, 0));
    const std::string dir = options.data_dir.empty() ? config.data_dir : options.data_dir;
    norm = load_splits(dir, parse_data_format(config.data_format), config.train_per_class, 1)
               .train.norm;
    source = "untrained:" + options.config_path;
  }
  require(!net.tap_layers.empty(), ErrorKind::config, "analyze needs at least one tapped layer");
  const std::string dir = options.data_dir.empty() ? config.data_dir : options.data_dir;
  const Dataset test = load_test_split(config, dir, norm);
  const Batch batch = diagnostic_batch(test, options.max_samples);
  const auto fwd = forward(net, batch.x);
  const std::size_t k = net.tap_layers.back();
  const FpTensor emb = binary_embeddings(net, fwd.cache, k);
  const CorrelationMatrix cm = correlation_matrix(emb, batch.labels);

  const fs::path out(options.out_dir);
  fs::create_directories(out);
  {
    std::string csv = "label";
    for (std::size_t c = 0; c < cm.n; ++c) csv += ",s" + std::to_string(cm.order[c]);
    csv += "\n";
    for (std::size_t r = 0; r < cm.n; ++r) {
      csv += std::to_string(cm.sorted_labels[r]);
      for (std::size_t c = 0; c < cm.n; ++c) csv += "," + fmt(cm.at(r, c));
      csv += "\n";
    }
    write_text(out / "correlation_matrix.csv", csv);
  }
  {
    const std::size_t n = cm.classes.size();
    std::string csv = "class";
    for (int c : cm.classes) csv += "," + std::to_string(c);
    csv += "\n";
    for (std::size_t a = 0; a < n; ++a) {
      csv += std::to_string(cm.classes[a]);
      for (std::size_t b = 0; b < n; ++b) csv += "," + fmt(cm.class_mean[a * n + b]);
      csv += "\n";
    }
    write_text(out / "class_mean_matrix.csv", csv);
  }
  {
    std::string csv = "index,label";
    for (std::size_t d = 0; d < emb.cols(); ++d) csv += ",e" + std::to_string(d);
    csv += "\n";
    for (std::size_t r = 0; r < emb.rows(); ++r) {
      csv += std::to_string(batch.indices[r]) + "," + std::to_string(batch.labels[r]);
      for (std::size_t d = 0; d < emb.cols(); ++d) csv += "," + fmt(emb(r, d));
      csv += "\n";
    }
    write_text(out / "embeddings.csv", csv);
  }
  const json summary{{"source", source},
                     {"layer", k},
                     {"samples", cm.n},
                     {"intra_class_mean", cm.intra_mean},
                     {"inter_class_mean", cm.inter_mean},
                     {"gap", cm.intra_mean - cm.inter_mean},
                     {"classes", cm.classes},
                     {"class_boundaries", cm.class_boundaries}};
  write_text(out / "similarity.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_synth(const SynthOptions& options) {
  require(!options.out_dir.empty(), ErrorKind::config, "synth needs --out");
  require(options.n_train > 0 && options.n_test > 0, ErrorKind::config,
          "synth needs positive sample counts");
  write_synth_mnist(options.out_dir, options.n_train, options.n_test, options.seed);
  std::cout << json{{"out", options.out_dir}, {"train", options.n_train}, {"test", options.n_test},
                    {"seed", options.seed}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace bnn
