#include "bnn/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

namespace bnn {

using nlohmann::json;

namespace {

const std::set<std::string> kKeys = {
    "preset",      "arch",         "tap_layers",     "lambda",         "beta",
    "tau",         "n_nce",        "m_pairs",        "warm_policy",    "critic_norm",
    "detach_affine", "epochs",
    "batch_size",  "lr0",          "momentum",       "weight_decay",   "seed",
    "data_dir",    "data_format",  "train_per_class", "test_per_class", "augment",
    "mi_bins",     "diag_samples", "out_dir",        "checkpoint_every", "stop_after",
    "threads"};
const std::set<std::string> kRuntimeKeys = {"out_dir", "data_dir", "checkpoint_every",
                                            "stop_after", "threads"};
const std::set<std::string> kArchKeys = {"type", "widths", "input_shape", "conv", "classes"};

json arch_to_json(const ArchSpec& a) {
  json j{{"type", a.type}};
  if (a.type == "mlp") {
    j["widths"] = a.widths;
  } else {
    j["input_shape"] = a.input_shape;
    json conv = json::array();
    for (const auto& c : a.conv) conv.push_back({{"channels", c.channels}, {"stride", c.stride}});
    j["conv"] = conv;
    j["classes"] = a.classes;
  }
  return j;
}

template <class V>
V get_as(const json& j, const std::string& key) {
  try {
    return j.get<V>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, "config key '" + key + "' has the wrong type: " + j.dump());
  }
}

std::size_t get_count(const json& j, const std::string& key) {
  require(j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0),
          ErrorKind::config, "config key '" + key + "' must be a non-negative integer");
  return j.get<std::size_t>();
}

double get_real(const json& j, const std::string& key) {
  require(j.is_number(), ErrorKind::config, "config key '" + key + "' must be a number");
  return j.get<double>();
}

ArchSpec arch_from_json(const json& j) {
  require(j.is_object(), ErrorKind::config, "'arch' must be an object");
  for (const auto& [k, v] : j.items()) {
    require(kArchKeys.count(k) != 0, ErrorKind::config, "unknown arch key '" + k + "'");
  }
  ArchSpec a;
  a.type = j.contains("type") ? get_as<std::string>(j["type"], "arch.type") : "mlp";
  if (j.contains("widths")) a.widths = get_as<std::vector<std::size_t>>(j["widths"], "arch.widths");
  if (j.contains("input_shape")) {
    a.input_shape = get_as<std::vector<std::size_t>>(j["input_shape"], "arch.input_shape");
  }
  if (j.contains("conv")) {
    require(j["conv"].is_array(), ErrorKind::config, "'arch.conv' must be an array");
    for (const auto& c : j["conv"]) {
      require(c.is_object(), ErrorKind::config, "'arch.conv' entries must be objects");
      for (const auto& [k, v] : c.items()) {
        require(k == "channels" || k == "stride", ErrorKind::config,
                "unknown arch.conv key '" + k + "'");
      }
      ConvSpec spec;
      spec.channels = get_count(c.at("channels"), "arch.conv.channels");
      if (c.contains("stride")) spec.stride = get_count(c["stride"], "arch.conv.stride");
      a.conv.push_back(spec);
    }
  }
  if (j.contains("classes")) a.classes = get_count(j["classes"], "arch.classes");
  return a;
}

json to_json_object(const CmimConfig& c) {
  return json{{"preset", c.preset},
              {"arch", arch_to_json(c.arch)},
              {"tap_layers", c.tap_layers},
              {"lambda", c.lambda},
              {"beta", c.beta},
              {"tau", c.tau},
              {"n_nce", c.n_nce},
              {"m_pairs", c.m_pairs},
              {"warm_policy", c.warm_policy},
              {"critic_norm", c.critic_norm},
              {"detach_affine", c.detach_affine},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr0", c.lr0},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"data_dir", c.data_dir},
              {"data_format", c.data_format},
              {"train_per_class", c.train_per_class},
              {"test_per_class", c.test_per_class},
              {"augment", c.augment},
              {"mi_bins", c.mi_bins},
              {"diag_samples", c.diag_samples},
              {"out_dir", c.out_dir},
              {"checkpoint_every", c.checkpoint_every},
              {"stop_after", c.stop_after},
              {"threads", c.threads}};
}

CmimConfig from_json_object(const json& j) {
  require(j.is_object(), ErrorKind::config, "config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    require(kKeys.count(k) != 0, ErrorKind::config, "unknown config key '" + k + "'");
  }
  CmimConfig c = preset_config(j.contains("preset") ? get_as<std::string>(j["preset"], "preset")
                                                    : std::string("desk"));
  if (j.contains("arch")) c.arch = arch_from_json(j["arch"]);
  if (j.contains("tap_layers")) {
    c.tap_layers = get_as<std::vector<std::size_t>>(j["tap_layers"], "tap_layers");
  }
  auto real = [&](const char* key, double& out) {
    if (j.contains(key)) out = get_real(j[key], key);
  };
  auto count = [&](const char* key, std::size_t& out) {
    if (j.contains(key)) out = get_count(j[key], key);
  };
  auto text = [&](const char* key, std::string& out) {
    if (j.contains(key)) out = get_as<std::string>(j[key], key);
  };
  real("lambda", c.lambda);
  real("beta", c.beta);
  real("tau", c.tau);
  count("n_nce", c.n_nce);
  count("m_pairs", c.m_pairs);
  text("warm_policy", c.warm_policy);
  text("critic_norm", c.critic_norm);
  if (j.contains("detach_affine")) c.detach_affine = get_as<bool>(j["detach_affine"], "detach_affine");
  count("epochs", c.epochs);
  count("batch_size", c.batch_size);
  real("lr0", c.lr0);
  real("momentum", c.momentum);
  real("weight_decay", c.weight_decay);
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j["seed"], "seed");
  text("data_dir", c.data_dir);
  text("data_format", c.data_format);
  count("train_per_class", c.train_per_class);
  count("test_per_class", c.test_per_class);
  if (j.contains("augment")) c.augment = get_as<bool>(j["augment"], "augment");
  count("mi_bins", c.mi_bins);
  count("diag_samples", c.diag_samples);
  text("out_dir", c.out_dir);
  count("checkpoint_every", c.checkpoint_every);
  count("stop_after", c.stop_after);
  count("threads", c.threads);
  c.validate();
  return c;
}

}  // namespace

void CmimConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  require(finite(beta) && beta > 1.0, ErrorKind::config, "beta must be > 1");
  require(finite(tau) && tau > 0.0, ErrorKind::config, "tau must be > 0");
  require(n_nce >= 1, ErrorKind::config, "n_nce must be >= 1");
  require(epochs >= 1, ErrorKind::config, "epochs must be >= 1");
  require(finite(lambda) && lambda >= 0.0, ErrorKind::config, "lambda must be >= 0");
  require(m_pairs == 0 || m_pairs >= n_nce, ErrorKind::config, "m_pairs must be >= n_nce");
  require(batch_size >= 2, ErrorKind::config, "batch_size must be >= 2 (batch normalization)");
  require(finite(lr0) && lr0 >= 0.0, ErrorKind::config, "lr0 must be >= 0");
  require(finite(momentum) && momentum >= 0.0 && momentum < 1.0, ErrorKind::config,
          "momentum must be in [0, 1)");
  require(finite(weight_decay) && weight_decay >= 0.0, ErrorKind::config,
          "weight_decay must be >= 0");
  require(warm_policy == "skip_cold" || warm_policy == "strict", ErrorKind::config,
          "warm_policy must be skip_cold or strict");
  require(critic_norm == "none" || critic_norm == "estimate", ErrorKind::config,
          "critic_norm must be none or estimate");
  require(data_format == "idx" || data_format == "cifar", ErrorKind::config,
          "data_format must be idx or cifar");
  require(mi_bins >= 2, ErrorKind::config, "mi_bins must be >= 2");
  require(diag_samples >= 2, ErrorKind::config, "diag_samples must be >= 2");
  require(arch.type == "mlp" || arch.type == "conv", ErrorKind::config,
          "arch.type must be mlp or conv");
  if (arch.type == "mlp") {
    require(arch.widths.size() >= 2, ErrorKind::config, "arch.widths needs at least 2 entries");
    for (auto w : arch.widths) require(w >= 1, ErrorKind::config, "arch widths must be >= 1");
  } else {
    require(arch.input_shape.size() == 3, ErrorKind::config,
            "arch.input_shape must be [channels, height, width]");
    require(!arch.conv.empty() && arch.classes >= 1, ErrorKind::config,
            "conv arch needs conv layers and classes");
  }
  const std::size_t depth =
      arch.type == "mlp" ? arch.widths.size() - 1 : arch.conv.size() + 1;
  for (auto k : tap_layers) {
    require(k >= 1 && k < depth, ErrorKind::config,
            "tap layer " + std::to_string(k) + " is not a hidden layer of a " +
                std::to_string(depth) + "-layer network");
  }
}

CmimConfig preset_config(const std::string& name) {
  CmimConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "conv") {
    c.arch = ArchSpec{"conv", {}, {3, 32, 32}, {{32, 1}, {64, 2}, {128, 2}}, 10};
    c.tap_layers = {1, 2, 3};
    c.data_dir = "data/cifar10";
    c.data_format = "cifar";
    c.train_per_class = 1000;
    c.augment = true;
    c.n_nce = 512;
    c.out_dir = "runs/conv";
    return c;
  }
  if (name == "smoke") {
    c.arch = ArchSpec{"mlp", {784, 64, 64, 10}, {}, {}, 0};
    c.epochs = 2;
    c.n_nce = 32;
    c.train_per_class = 50;
    c.test_per_class = 20;
    c.diag_samples = 128;
    c.checkpoint_every = 1;
    c.out_dir = "runs/smoke";
    return c;
  }
  fail(ErrorKind::config, "unknown preset '" + name + "' (expected desk, conv or smoke)");
}

std::string config_to_json(const CmimConfig& config, int indent) {
  return to_json_object(config).dump(indent);
}

CmimConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
  }
  return from_json_object(j);
}

CmimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::config, "cannot open config " + path);
  return config_from_json(std::string(std::istreambuf_iterator<char>(in), {}));
}

void apply_overrides(CmimConfig& config, std::span<const std::string> assignments) {
  json j = to_json_object(config);
  for (const auto& assignment : assignments) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::config,
            "override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    std::string pointer = "/" + key;
    for (auto& ch : pointer) {
      if (ch == '.') ch = '/';
    }
    const json::json_pointer ptr(pointer);
    require(j.contains(ptr.parent_pointer()) || ptr.parent_pointer().empty(), ErrorKind::config,
            "override key '" + key + "' has no parent object");
    if (key == "preset") {
      // Switching preset resets everything set so far to that preset's defaults.
      j = to_json_object(preset_config(get_as<std::string>(value, key)));
      continue;
    }
    j[ptr] = value;
  }
  // Validated once at the end, so dependent keys can change in any order.
  config = from_json_object(j);
}

void apply_override(CmimConfig& config, const std::string& assignment) {
  apply_overrides(config, std::span<const std::string>(&assignment, 1));
}

std::string config_hash(const CmimConfig& config) {
  json j = to_json_object(config);
  for (const auto& k : kRuntimeKeys) j.erase(k);
  const std::string canonical = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bnn
