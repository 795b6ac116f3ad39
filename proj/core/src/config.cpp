// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "vlmoe/errors.hpp"
#include "vlmoe/model.hpp"

namespace vlmoe {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError("config line " + std::to_string(lineno) +
                      ": expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw DataError("config line " + std::to_string(lineno) + ": empty key");
    kv.values_[key] = value;
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_text(buf.str());
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) > 0;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::string KeyValueConfig::get_str(const std::string& key,
                                    const std::string& dflt) const {
  auto it = values_.find(key);
  return it == values_.end() ? dflt : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int dflt) const {
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': expected integer, got '" +
                    it->second + "'");
  }
}

uint64_t KeyValueConfig::get_u64(const std::string& key, uint64_t dflt) const {
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': expected unsigned integer, got '" +
                    it->second + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double dflt) const {
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': expected number, got '" +
                    it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool dflt) const {
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw DataError("config key '" + key + "': expected boolean, got '" +
                  it->second + "'");
}

void KeyValueConfig::require_known(
    const std::vector<std::string>& known) const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw DataError(msg);
  }
}

std::vector<std::string> KeyValueConfig::keys() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [key, value] : values_) out.push_back(key);
  return out;
}

std::string KeyValueConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << " = " << value << "\n";
  return os.str();
}

namespace {
std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace

void apply_model_config(const KeyValueConfig& kv, ModelConfig& cfg) {
  cfg.hidden_size = kv.get_int("model.hidden_size", cfg.hidden_size);
  cfg.layers = kv.get_int("model.layers", cfg.layers);
  cfg.heads = kv.get_int("model.heads", cfg.heads);
  cfg.vocab = kv.get_int("model.vocab", cfg.vocab);
  cfg.experts = kv.get_int("model.experts", cfg.experts);
  cfg.top_k = kv.get_int("model.top_k", cfg.top_k);
  cfg.moe_period = kv.get_int("model.moe_period", cfg.moe_period);
  cfg.patch_size = kv.get_int("model.patch_size", cfg.patch_size);
  cfg.image_size = kv.get_int("model.image_size", cfg.image_size);
  cfg.patch_channels = kv.get_int("model.patch_channels", cfg.patch_channels);
  cfg.ffn_hidden = kv.get_int("model.ffn_hidden", cfg.ffn_hidden);
  cfg.lora_rank = kv.get_int("model.lora_rank", cfg.lora_rank);
  cfg.lora_scale = kv.get_double("model.lora_scale", cfg.lora_scale);
  cfg.aux_alpha = kv.get_double("model.alpha", cfg.aux_alpha);
  cfg.max_text_len = kv.get_int("model.max_text_len", cfg.max_text_len);
  cfg.visual_bidirectional =
      kv.get_bool("model.visual_bidirectional", cfg.visual_bidirectional);
  cfg.layer_norm_eps = kv.get_double("model.layer_norm_eps", cfg.layer_norm_eps);
}

void dump_model_config(const ModelConfig& cfg, KeyValueConfig& kv) {
  kv.set("model.hidden_size", std::to_string(cfg.hidden_size));
  kv.set("model.layers", std::to_string(cfg.layers));
  kv.set("model.heads", std::to_string(cfg.heads));
  kv.set("model.vocab", std::to_string(cfg.vocab));
  kv.set("model.experts", std::to_string(cfg.experts));
  kv.set("model.top_k", std::to_string(cfg.top_k));
  kv.set("model.moe_period", std::to_string(cfg.moe_period));
  kv.set("model.patch_size", std::to_string(cfg.patch_size));
  kv.set("model.image_size", std::to_string(cfg.image_size));
  kv.set("model.patch_channels", std::to_string(cfg.patch_channels));
  kv.set("model.ffn_hidden", std::to_string(cfg.ffn_hidden));
  kv.set("model.lora_rank", std::to_string(cfg.lora_rank));
  kv.set("model.lora_scale", fmt_double(cfg.lora_scale));
  kv.set("model.alpha", fmt_double(cfg.aux_alpha));
  kv.set("model.max_text_len", std::to_string(cfg.max_text_len));
  kv.set("model.visual_bidirectional",
         cfg.visual_bidirectional ? "true" : "false");
  kv.set("model.layer_norm_eps", fmt_double(cfg.layer_norm_eps));
}

std::vector<std::string> model_config_keys() {
  return {"model.hidden_size",    "model.layers",
          "model.heads",          "model.vocab",
          "model.experts",        "model.top_k",
          "model.moe_period",     "model.patch_size",
          "model.image_size",     "model.patch_channels",
          "model.ffn_hidden",     "model.lora_rank",
          "model.lora_scale",     "model.alpha",
          "model.max_text_len",   "model.visual_bidirectional",
          "model.layer_norm_eps"};
}

}  // namespace vlmoe
