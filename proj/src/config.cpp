#include "crowd/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crowd/errors.hpp"

namespace crowd {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& where, const std::string& key,
                            const std::string& value, const char* want) {
  throw ConfigError(where + ": key '" + key + "' needs " + want + ", got '" +
                    value + "'");
}

long long parse_ll(const std::string& where, const std::string& key,
                   const std::string& value) {
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0' || errno == ERANGE)
    bad_value(where, key, value, "an integer");
  return v;
}

int parse_int(const std::string& where, const std::string& key,
              const std::string& value) {
  long long v = parse_ll(where, key, value);
  if (v < -2147483648LL || v > 2147483647LL)
    bad_value(where, key, value, "a 32-bit integer");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& where, const std::string& key,
                        const std::string& value) {
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0' || errno == ERANGE ||
      value.find('-') != std::string::npos)
    bad_value(where, key, value, "a non-negative integer");
  return v;
}

double parse_double(const std::string& where, const std::string& key,
                    const std::string& value) {
  char* end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0')
    bad_value(where, key, value, "a number");
  return v;
}

std::vector<int> parse_int_list(const std::string& where,
                                const std::string& key,
                                const std::string& value) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    std::size_t comma = value.find(',', pos);
    std::string piece = trim(value.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (piece.empty()) bad_value(where, key, value, "a comma-separated list");
    out.push_back(parse_int(where, key, piece));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::string fmt(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::string to_string(DensityBand band) {
  switch (band) {
    case DensityBand::low:
      return "low";
    case DensityBand::medium:
      return "medium";
    default:
      return "high";
  }
}

DensityBand band_from_string(const std::string& s) {
  if (s == "low") return DensityBand::low;
  if (s == "medium") return DensityBand::medium;
  if (s == "high") return DensityBand::high;
  throw ConfigError("unknown density band: " + s + " (want low, medium, high)");
}

void RunConfig::validate() const {
  model.validate();
  weights.validate();
  if (sinkhorn.max_iters < 1)
    throw ConfigError("ot.max_iters must be >= 1");
  if (sinkhorn.tol <= 0) throw ConfigError("ot.tol must be > 0");
  if (mask_ratio < 0.0 || mask_ratio > 0.95)
    throw ConfigError("mask.ratio must lie in [0, 0.95]");
  if (train_count < 0 || val_count < 0)
    throw ConfigError("dataset split sizes must be >= 0");
  if (lr <= 0) throw ConfigError("train.lr must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (eval_sigma <= 0) throw ConfigError("eval.sigma must be > 0");
  if (peak_threshold < 0) throw ConfigError("eval.peak_threshold must be >= 0");
  if (peak_neighborhood < 3 || peak_neighborhood % 2 == 0)
    throw ConfigError("eval.neighborhood must be odd and >= 3");
}

void set_config_key(RunConfig& cfg, const std::string& key,
                    const std::string& value, const std::string& where) {
  if (key == "seed") cfg.seed = parse_u64(where, key, value);
  else if (key == "model.channels")
    cfg.model.stage_channels = parse_int_list(where, key, value);
  else if (key == "model.decoder_c1")
    cfg.model.decoder_c1 = parse_int(where, key, value);
  else if (key == "model.decoder_c2")
    cfg.model.decoder_c2 = parse_int(where, key, value);
  else if (key == "model.encoder_layers")
    cfg.model.encoder_layers = parse_int(where, key, value);
  else if (key == "model.hidden") cfg.model.hidden = parse_int(where, key, value);
  else if (key == "model.heads") cfg.model.heads = parse_int(where, key, value);
  else if (key == "model.ffn") cfg.model.ffn = parse_int(where, key, value);
  else if (key == "model.proj_dim")
    cfg.model.proj_dim = parse_int(where, key, value);
  else if (key == "loss.lambda1")
    cfg.weights.lambda1 = parse_double(where, key, value);
  else if (key == "loss.lambda2")
    cfg.weights.lambda2 = parse_double(where, key, value);
  else if (key == "loss.alpha")
    cfg.weights.alpha = parse_double(where, key, value);
  else if (key == "loss.beta")
    cfg.weights.beta = parse_double(where, key, value);
  else if (key == "ot.epsilon")
    cfg.sinkhorn.epsilon = parse_double(where, key, value);
  else if (key == "ot.max_iters")
    cfg.sinkhorn.max_iters = parse_int(where, key, value);
  else if (key == "ot.tol") cfg.sinkhorn.tol = parse_double(where, key, value);
  else if (key == "tv.sigma") cfg.tv_sigma = parse_double(where, key, value);
  else if (key == "mask.ratio")
    cfg.mask_ratio = parse_double(where, key, value);
  else if (key == "mask.strategy")
    cfg.mask_strategy = mask_strategy_from_string(value);
  else if (key == "mpm.variant")
    cfg.mpm_variant = consistent_variant_from_string(value);
  else if (key == "clm.variant")
    cfg.clm_variant = clm_variant_from_string(value);
  else if (key == "clm.dilation") cfg.dilation = dilation_from_string(value);
  else if (key == "scene.image_size")
    cfg.scene.image_size = parse_int(where, key, value);
  else if (key == "scene.band") cfg.scene.band = band_from_string(value);
  else if (key == "scene.count_min")
    cfg.scene.count_min = parse_int(where, key, value);
  else if (key == "scene.count_max")
    cfg.scene.count_max = parse_int(where, key, value);
  else if (key == "scene.radius_min")
    cfg.scene.radius_min = parse_double(where, key, value);
  else if (key == "scene.radius_max")
    cfg.scene.radius_max = parse_double(where, key, value);
  else if (key == "scene.background_amplitude")
    cfg.scene.background_amplitude = parse_double(where, key, value);
  else if (key == "scene.clutter_count")
    cfg.scene.clutter_count = parse_int(where, key, value);
  else if (key == "scene.min_spacing")
    cfg.scene.min_spacing = parse_double(where, key, value);
  else if (key == "data.train_count")
    cfg.train_count = parse_int(where, key, value);
  else if (key == "data.val_count")
    cfg.val_count = parse_int(where, key, value);
  else if (key == "train.lr") cfg.lr = parse_double(where, key, value);
  else if (key == "train.epochs") cfg.epochs = parse_int(where, key, value);
  else if (key == "train.batch_size")
    cfg.batch_size = parse_int(where, key, value);
  else if (key == "eval.sigma")
    cfg.eval_sigma = parse_double(where, key, value);
  else if (key == "eval.peak_threshold")
    cfg.peak_threshold = parse_double(where, key, value);
  else if (key == "eval.neighborhood")
    cfg.peak_neighborhood = parse_int(where, key, value);
  else
    throw ConfigError(where + ": unknown key '" + key + "'");
}

std::string config_to_text(const RunConfig& c) {
  std::string out;
  auto kv = [&out](const char* key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  };
  kv("seed", fmt(c.seed));
  kv("model.channels", fmt(c.model.stage_channels));
  kv("model.decoder_c1", fmt(c.model.decoder_c1));
  kv("model.decoder_c2", fmt(c.model.decoder_c2));
  kv("model.encoder_layers", fmt(c.model.encoder_layers));
  kv("model.hidden", fmt(c.model.hidden));
  kv("model.heads", fmt(c.model.heads));
  kv("model.ffn", fmt(c.model.ffn));
  kv("model.proj_dim", fmt(c.model.proj_dim));
  kv("loss.lambda1", fmt(c.weights.lambda1));
  kv("loss.lambda2", fmt(c.weights.lambda2));
  kv("loss.alpha", fmt(c.weights.alpha));
  kv("loss.beta", fmt(c.weights.beta));
  kv("ot.epsilon", fmt(c.sinkhorn.epsilon));
  kv("ot.max_iters", fmt(c.sinkhorn.max_iters));
  kv("ot.tol", fmt(c.sinkhorn.tol));
  kv("tv.sigma", fmt(c.tv_sigma));
  kv("mask.ratio", fmt(c.mask_ratio));
  kv("mask.strategy", to_string(c.mask_strategy));
  kv("mpm.variant", to_string(c.mpm_variant));
  kv("clm.variant", to_string(c.clm_variant));
  kv("clm.dilation", to_string(c.dilation));
  kv("scene.image_size", fmt(c.scene.image_size));
  kv("scene.band", to_string(c.scene.band));
  kv("scene.count_min", fmt(c.scene.count_min));
  kv("scene.count_max", fmt(c.scene.count_max));
  kv("scene.radius_min", fmt(c.scene.radius_min));
  kv("scene.radius_max", fmt(c.scene.radius_max));
  kv("scene.background_amplitude", fmt(c.scene.background_amplitude));
  kv("scene.clutter_count", fmt(c.scene.clutter_count));
  kv("scene.min_spacing", fmt(c.scene.min_spacing));
  kv("data.train_count", fmt(c.train_count));
  kv("data.val_count", fmt(c.val_count));
  kv("train.lr", fmt(c.lr));
  kv("train.epochs", fmt(c.epochs));
  kv("train.batch_size", fmt(c.batch_size));
  kv("eval.sigma", fmt(c.eval_sigma));
  kv("eval.peak_threshold", fmt(c.peak_threshold));
  kv("eval.neighborhood", fmt(c.peak_neighborhood));
  return out;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin,
                            RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    set_config_key(base, key, value, where);
  }
  return base;
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path, std::move(base));
}

void write_config_file(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  std::string text = config_to_text(cfg);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out.flush()) throw IoError("write failure on " + path);
}

}  // namespace crowd
