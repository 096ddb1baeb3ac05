// Command-line front end: train, eval, sweep, analyze, synth.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "bnn/commands.hpp"
#include "bnn/training.hpp"

namespace {

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : csv) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string self_path(const char* argv0) {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::string(argv0) : p.string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{bnn::cmim_enabled() ? "Binary network training with contrastive MI maximization"
                                   : "Binary network training (baseline build, no contrastive objective)"};
  app.require_subcommand(1);

  std::string config_path, preset;
  std::vector<std::string> overrides;
  bool resume = false, force = false, quiet = false;
  auto* train = app.add_subcommand("train", "Train a network");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--preset", preset, "Start from a preset (desk, conv, smoke)");
  train->add_option("--override", overrides, "key=value, repeatable")->take_all();
  train->add_flag("--resume", resume, "Continue from the run directory's checkpoint");
  train->add_flag("--force", force, "Accept a checkpoint with a different config hash");
  train->add_flag("--quiet", quiet, "No per-epoch progress lines");

  bnn::EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint on the test split");
  eval->add_option("--ckpt", eval_opts.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_opts.data_dir, "Data directory");

  std::string sweep_param, sweep_values;
  std::size_t jobs = 1;
  std::uint64_t seed_stride = 1;
  auto* sweep = app.add_subcommand("sweep", "Train one run per parameter value");
  sweep->add_option("--config", config_path, "JSON config file");
  sweep->add_option("--preset", preset, "Start from a preset");
  sweep->add_option("--override", overrides, "key=value, repeatable")->take_all();
  sweep->add_option("--param", sweep_param, "lambda or n_nce")->required();
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
  sweep->add_option("--jobs", jobs, "Parallel subprocess cells");
  sweep->add_option("--seed-stride", seed_stride, "Seed offset between cells");

  bnn::AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "Similarity matrices and embeddings");
  analyze->add_option("--ckpt", an.checkpoint, "Checkpoint file");
  analyze->add_option("--config", an.config_path, "Analyze the untrained network of this config");
  analyze->add_option("--override", an.overrides, "key=value applied to --config")->take_all();
  analyze->add_option("--data", an.data_dir, "Data directory");
  analyze->add_option("--out", an.out_dir, "Output directory")->required();
  analyze->add_option("--samples", an.max_samples, "Held-out samples (default 512)");

  bnn::SynthOptions syn;
  auto* synth = app.add_subcommand("synth", "Write procedural MNIST-format digits");
  synth->add_option("--out", syn.out_dir, "Output directory")->required();
  synth->add_option("--train", syn.n_train, "Training samples");
  synth->add_option("--test", syn.n_test, "Test samples");
  synth->add_option("--seed", syn.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << bnn::error_json("config", e.what()) << "\n";
    return 2;
  }

  try {
    if (*train) {
      bnn::TrainOptions t;
      t.config = bnn::resolve_config(config_path, preset, overrides);
      t.resume = resume;
      t.force = force;
      t.quiet = quiet;
      return bnn::cmd_train(t);
    }
    if (*eval) return bnn::cmd_eval(eval_opts);
    if (*sweep) {
      bnn::SweepOptions s;
      s.config = bnn::resolve_config(config_path, preset, overrides);
      s.param = sweep_param;
      s.values = split_values(sweep_values);
      s.jobs = jobs;
      s.seed_stride = seed_stride;
      s.executable = self_path(argv[0]);
      return bnn::cmd_sweep(s);
    }
    if (*analyze) return bnn::cmd_analyze(an);
    if (*synth) return bnn::cmd_synth(syn);
  } catch (const bnn::Error& e) {
    std::cerr << bnn::error_json(bnn::to_string(e.kind()), e.what()) << "\n";
    return bnn::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << bnn::error_json("internal", e.what()) << "\n";
    return 1;
  }
  return 0;
}
