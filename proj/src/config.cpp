#include "alter/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "alter/common.hpp"

namespace alter {

Variant parse_variant(const std::string& name) {
  if (name == "alter") return Variant::kAlter;
  if (name == "static") return Variant::kStatic;
  if (name == "manual") return Variant::kManual;
  if (name == "two_stage") return Variant::kTwoStage;
  throw std::invalid_argument("unknown variant: " + name);
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kAlter: return "alter";
    case Variant::kStatic: return "static";
    case Variant::kManual: return "manual";
    case Variant::kTwoStage: return "two_stage";
  }
  return "alter";
}

void TrainConfig::validate() const {
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (hypernet_end < 0 || hypernet_end > total_steps) {
    throw ConfigError("hypernet_end must lie in [0, total_steps]");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ConfigError("warmup_steps must lie in [0, total_steps)");
  }
  if (!(lr_unet > 0.0) || !(lr_hypernet > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (t_total < 2) throw ConfigError("t_total must be >= 2");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  model.validate();
  if (model.n_layers % 2 != 0) {
    throw ConfigError("n_layers must be even (encoder/decoder pairing)");
  }
  if (n_experts < 1) throw ConfigError("n_experts must be >= 1");
  if (variant == Variant::kStatic && n_experts != 1) {
    throw ConfigError("static variant forces n_experts = 1");
  }
  hypernet_config().validate();
  weights.validate();
  data.validate();
  if (dataset_size < batch_size) {
    throw ConfigError("dataset_size must be >= batch_size");
  }
  if (!(mmd_threshold > 0.0)) throw ConfigError("mmd_threshold must be positive");
}

HypernetConfig TrainConfig::hypernet_config() const {
  HypernetConfig h;
  h.n_experts = n_experts;
  h.n_layers = model.n_layers;
  h.d_input = d_input;
  h.d_expert = d_expert;
  h.d_router = d_router;
  h.d_emb = model.emb_dim();
  h.tau_gen = tau_gen;
  h.bias_gen = bias_gen;
  h.tau_route = tau_route;
  h.bias_route = bias_route;
  h.init_std = hypernet_init_std;
  return h;
}

namespace {

struct KeyBinding {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

int64_t parse_int(const std::string& v) {
  size_t pos = 0;
  int64_t out = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return out;
}

double parse_real(const std::string& v) {
  size_t pos = 0;
  double out = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true/false");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

// Declaration order here is the canonical serialization order.
const std::vector<std::pair<std::string, KeyBinding>>& key_table() {
  static const std::vector<std::pair<std::string, KeyBinding>> table = {
      {"total_steps",
       {[](const TrainConfig& c) { return std::to_string(c.total_steps); },
        [](TrainConfig& c, const std::string& v) { c.total_steps = parse_int(v); }}},
      {"hypernet_end",
       {[](const TrainConfig& c) { return std::to_string(c.hypernet_end); },
        [](TrainConfig& c, const std::string& v) { c.hypernet_end = parse_int(v); }}},
      {"batch_size",
       {[](const TrainConfig& c) { return std::to_string(c.batch_size); },
        [](TrainConfig& c, const std::string& v) { c.batch_size = static_cast<int>(parse_int(v)); }}},
      {"warmup_steps",
       {[](const TrainConfig& c) { return std::to_string(c.warmup_steps); },
        [](TrainConfig& c, const std::string& v) { c.warmup_steps = parse_int(v); }}},
      {"lr_unet",
       {[](const TrainConfig& c) { return format_double(c.lr_unet); },
        [](TrainConfig& c, const std::string& v) { c.lr_unet = parse_real(v); }}},
      {"lr_hypernet",
       {[](const TrainConfig& c) { return format_double(c.lr_hypernet); },
        [](TrainConfig& c, const std::string& v) { c.lr_hypernet = parse_real(v); }}},
      {"weight_decay",
       {[](const TrainConfig& c) { return format_double(c.weight_decay); },
        [](TrainConfig& c, const std::string& v) { c.weight_decay = parse_real(v); }}},
      {"grad_clip",
       {[](const TrainConfig& c) { return format_double(c.grad_clip); },
        [](TrainConfig& c, const std::string& v) { c.grad_clip = parse_real(v); }}},
      {"seed",
       {[](const TrainConfig& c) { return std::to_string(c.seed); },
        [](TrainConfig& c, const std::string& v) { c.seed = static_cast<uint64_t>(std::stoull(v)); }}},
      {"variant",
       {[](const TrainConfig& c) { return variant_name(c.variant); },
        [](TrainConfig& c, const std::string& v) { c.variant = parse_variant(v); }}},
      {"checkpoint_every",
       {[](const TrainConfig& c) { return std::to_string(c.checkpoint_every); },
        [](TrainConfig& c, const std::string& v) { c.checkpoint_every = parse_int(v); }}},
      {"t_total",
       {[](const TrainConfig& c) { return std::to_string(c.t_total); },
        [](TrainConfig& c, const std::string& v) { c.t_total = static_cast<int>(parse_int(v)); }}},
      {"schedule",
       {[](const TrainConfig& c) { return schedule_kind_name(c.schedule); },
        [](TrainConfig& c, const std::string& v) { c.schedule = parse_schedule_kind(v); }}},
      {"n_layers",
       {[](const TrainConfig& c) { return std::to_string(c.model.n_layers); },
        [](TrainConfig& c, const std::string& v) { c.model.n_layers = static_cast<int>(parse_int(v)); }}},
      {"hidden_width",
       {[](const TrainConfig& c) { return std::to_string(c.model.hidden_width); },
        [](TrainConfig& c, const std::string& v) { c.model.hidden_width = static_cast<int>(parse_int(v)); }}},
      {"data_dim",
       {[](const TrainConfig& c) { return std::to_string(c.model.data_dim); },
        [](TrainConfig& c, const std::string& v) { c.model.data_dim = static_cast<int>(parse_int(v)); }}},
      {"n_classes",
       {[](const TrainConfig& c) { return std::to_string(c.model.n_classes); },
        [](TrainConfig& c, const std::string& v) { c.model.n_classes = static_cast<int>(parse_int(v)); }}},
      {"n_experts",
       {[](const TrainConfig& c) { return std::to_string(c.n_experts); },
        [](TrainConfig& c, const std::string& v) { c.n_experts = static_cast<int>(parse_int(v)); }}},
      {"d_input",
       {[](const TrainConfig& c) { return std::to_string(c.d_input); },
        [](TrainConfig& c, const std::string& v) { c.d_input = static_cast<int>(parse_int(v)); }}},
      {"d_expert",
       {[](const TrainConfig& c) { return std::to_string(c.d_expert); },
        [](TrainConfig& c, const std::string& v) { c.d_expert = static_cast<int>(parse_int(v)); }}},
      {"d_router",
       {[](const TrainConfig& c) { return std::to_string(c.d_router); },
        [](TrainConfig& c, const std::string& v) { c.d_router = static_cast<int>(parse_int(v)); }}},
      {"tau_gen",
       {[](const TrainConfig& c) { return format_double(c.tau_gen); },
        [](TrainConfig& c, const std::string& v) { c.tau_gen = parse_real(v); }}},
      {"bias_gen",
       {[](const TrainConfig& c) { return format_double(c.bias_gen); },
        [](TrainConfig& c, const std::string& v) { c.bias_gen = parse_real(v); }}},
      {"tau_route",
       {[](const TrainConfig& c) { return format_double(c.tau_route); },
        [](TrainConfig& c, const std::string& v) { c.tau_route = parse_real(v); }}},
      {"bias_route",
       {[](const TrainConfig& c) { return format_double(c.bias_route); },
        [](TrainConfig& c, const std::string& v) { c.bias_route = parse_real(v); }}},
      {"hypernet_init_std",
       {[](const TrainConfig& c) { return format_double(c.hypernet_init_std); },
        [](TrainConfig& c, const std::string& v) { c.hypernet_init_std = parse_real(v); }}},
      {"lambda_denoise",
       {[](const TrainConfig& c) { return format_double(c.weights.lambda_denoise); },
        [](TrainConfig& c, const std::string& v) { c.weights.lambda_denoise = parse_real(v); }}},
      {"lambda_out_kd",
       {[](const TrainConfig& c) { return format_double(c.weights.lambda_out_kd); },
        [](TrainConfig& c, const std::string& v) { c.weights.lambda_out_kd = parse_real(v); }}},
      {"lambda_feat_kd",
       {[](const TrainConfig& c) { return format_double(c.weights.lambda_feat_kd); },
        [](TrainConfig& c, const std::string& v) { c.weights.lambda_feat_kd = parse_real(v); }}},
      {"lambda_ratio",
       {[](const TrainConfig& c) { return format_double(c.weights.lambda_ratio); },
        [](TrainConfig& c, const std::string& v) { c.weights.lambda_ratio = parse_real(v); }}},
      {"lambda_balance",
       {[](const TrainConfig& c) { return format_double(c.weights.lambda_balance); },
        [](TrainConfig& c, const std::string& v) { c.weights.lambda_balance = parse_real(v); }}},
      {"target_sparsity",
       {[](const TrainConfig& c) { return format_double(c.weights.target_sparsity); },
        [](TrainConfig& c, const std::string& v) { c.weights.target_sparsity = parse_real(v); }}},
      {"stability_eps",
       {[](const TrainConfig& c) { return format_double(c.weights.stability_eps); },
        [](TrainConfig& c, const std::string& v) { c.weights.stability_eps = parse_real(v); }}},
      {"perf_unweighted_denoise",
       {[](const TrainConfig& c) { return bool_str(c.weights.perf_unweighted_denoise); },
        [](TrainConfig& c, const std::string& v) { c.weights.perf_unweighted_denoise = parse_bool(v); }}},
      {"data_modes",
       {[](const TrainConfig& c) { return std::to_string(c.data.modes); },
        [](TrainConfig& c, const std::string& v) { c.data.modes = static_cast<int>(parse_int(v)); }}},
      {"data_radius",
       {[](const TrainConfig& c) { return format_double(c.data.radius); },
        [](TrainConfig& c, const std::string& v) { c.data.radius = parse_real(v); }}},
      {"data_sigma",
       {[](const TrainConfig& c) { return format_double(c.data.sigma); },
        [](TrainConfig& c, const std::string& v) { c.data.sigma = parse_real(v); }}},
      {"dataset_size",
       {[](const TrainConfig& c) { return std::to_string(c.dataset_size); },
        [](TrainConfig& c, const std::string& v) { c.dataset_size = static_cast<int>(parse_int(v)); }}},
      {"mmd_threshold",
       {[](const TrainConfig& c) { return format_double(c.mmd_threshold); },
        [](TrainConfig& c, const std::string& v) { c.mmd_threshold = parse_real(v); }}},
  };
  return table;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string TrainConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [key, binding] : key_table()) {
    out << key << " = " << binding.get(*this) << "\n";
  }
  return out.str();
}

TrainConfig TrainConfig::parse_text(const std::string& text,
                                    const std::string& source_name) {
  TrainConfig cfg;
  std::map<std::string, const KeyBinding*> lookup;
  for (const auto& [key, binding] : key_table()) lookup[key] = &binding;

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source_name + ": expected key = value", line_no);
    }
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    auto it = lookup.find(key);
    if (it == lookup.end()) {
      throw ConfigError(source_name + ": unknown key '" + key + "'", line_no);
    }
    try {
      it->second->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(source_name + ": bad value for '" + key + "': " + e.what(),
                        line_no);
    }
  }
  return cfg;
}

TrainConfig TrainConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path);
}

}  // namespace alter
