#include "dmsr/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dmsr::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& v, T lo) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  if (out < lo) throw ConfigError(key + ": must be >= " + std::to_string(lo) + ", got " + v);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty() || !std::isfinite(out))
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "model.backbone",  "model.blocks",        "model.embed_dim",  "model.window",
      "model.heads",     "model.mlp_ratio",     "model.stls_per_block", "model.k",
      "model.scale",     "model.relative_position_bias",
      "train.epochs",    "train.seed",          "train.lr",         "train.beta1",
      "train.beta2",     "train.eps",           "train.x_max",
      "data.noise_sigma", "data.synthetic",     "data.height",      "data.width",
      "data.manifest",   "data.dir",
  };
  return keys;
}

void Settings::set(const std::string& key, const std::string& value) {
  if (key == "model.backbone") model.backbone = parse_backbone(value);
  else if (key == "model.blocks") { model.blocks = parse_integer<int>(key, value, 1); blocks_set = true; }
  else if (key == "model.embed_dim") model.embed_dim = parse_integer<int>(key, value, 1);
  else if (key == "model.window") model.window = parse_integer<int>(key, value, 1);
  else if (key == "model.heads") model.heads = parse_integer<int>(key, value, 1);
  else if (key == "model.mlp_ratio") model.mlp_ratio = parse_integer<int>(key, value, 1);
  else if (key == "model.stls_per_block") model.stls_per_block = parse_integer<int>(key, value, 1);
  else if (key == "model.k") model.k = parse_integer<int>(key, value, 1);
  else if (key == "model.scale") model.scale = parse_integer<int>(key, value, 1);
  else if (key == "model.relative_position_bias") model.relative_position_bias = parse_bool(key, value);
  else if (key == "train.epochs") epochs = parse_integer<int>(key, value, 0);
  else if (key == "train.seed") seed = parse_integer<std::uint64_t>(key, value, 0);
  else if (key == "train.lr") adam.lr = parse_real(key, value);
  else if (key == "train.beta1") adam.beta1 = parse_real(key, value);
  else if (key == "train.beta2") adam.beta2 = parse_real(key, value);
  else if (key == "train.eps") adam.eps = parse_real(key, value);
  else if (key == "train.x_max") {
    x_max = parse_real(key, value);
    if (x_max <= 0) throw ConfigError(key + ": must be > 0");
  } else if (key == "data.noise_sigma") {
    noise_sigma = parse_real(key, value);
    if (noise_sigma < 0) throw ConfigError(key + ": must be >= 0");
  } else if (key == "data.synthetic") synthetic = parse_integer<int>(key, value, 0);
  else if (key == "data.height") height = parse_integer<long>(key, value, 1);
  else if (key == "data.width") width = parse_integer<long>(key, value, 1);
  else if (key == "data.manifest") manifest = value;
  else if (key == "data.dir") data_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

ModelConfig Settings::resolved_model() const {
  ModelConfig cfg = model;
  if (!blocks_set) cfg.blocks = ModelConfig::default_blocks(cfg.backbone);
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> Settings::echo() const {
  ModelConfig cfg = model;
  if (!blocks_set) cfg.blocks = ModelConfig::default_blocks(cfg.backbone);
  auto out = train::config_to_metadata(cfg);
  out["train.epochs"] = std::to_string(epochs);
  out["train.seed"] = std::to_string(seed);
  out["train.lr"] = number(adam.lr);
  out["train.beta1"] = number(adam.beta1);
  out["train.beta2"] = number(adam.beta2);
  out["train.eps"] = number(adam.eps);
  out["train.x_max"] = number(x_max);
  out["data.noise_sigma"] = number(noise_sigma);
  out["data.synthetic"] = std::to_string(synthetic);
  out["data.height"] = std::to_string(height);
  out["data.width"] = std::to_string(width);
  out["data.manifest"] = manifest;
  out["data.dir"] = data_dir;
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    bool known = false;
    for (const auto& k : known_keys()) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown config key '" + key + "'");
    out.emplace_back(key, value);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string format_echo(const std::map<std::string, std::string>& echo) {
  std::string out;
  for (const auto& [k, v] : echo) out += k + " = " + v + "\n";
  return out;
}

}  // namespace dmsr::cli
