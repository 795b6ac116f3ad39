// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vlmoe {

// Plain-text "dotted.key = value" configuration. Lines starting with '#' are
// comments. Unknown keys are rejected against a schema so typos never pass
// silently.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_text(const std::string& text);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_str(const std::string& key, const std::string& dflt) const;
  int get_int(const std::string& key, int dflt) const;
  uint64_t get_u64(const std::string& key, uint64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;

  // DataError naming every key outside `known`
  void require_known(const std::vector<std::string>& known) const;

  std::vector<std::string> keys() const;
  std::string to_text() const;  // sorted, one "key = value" per line

 private:
  std::map<std::string, std::string> values_;
};

struct ModelConfig;
struct TrainConfigView;

// model.* keys
void apply_model_config(const KeyValueConfig& kv, ModelConfig& cfg);
void dump_model_config(const ModelConfig& cfg, KeyValueConfig& kv);
std::vector<std::string> model_config_keys();

}  // namespace vlmoe
