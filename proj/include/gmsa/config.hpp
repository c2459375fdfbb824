#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gmsa/model.hpp"

namespace gmsa {

// Line-delimited "key = value" file with [model], [training], [compression]
// and [flops] sections. '#' starts a comment. Every key has a default;
// unknown keys or sections are errors.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_text(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  double get_real(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                const std::vector<int>& fallback) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string origin_;
  void validate_known_keys() const;
};

// [model] + [compression] resolved onto ModelConfig defaults
ModelConfig model_config_from(const ConfigFile& cfg);

struct TrainSettings {
  double learning_rate = 0.0;  // 0 = stage default
  int batch_size = 0;          // 0 = stage default
  int total_steps = 0;
  double clip_norm = 2.0;
  uint64_t seed = 17;
  double weight_decay = 0.01;
};

// [training] resolved; learning_rate/batch_size fall back to per-stage
// defaults (ae: 1e-4 / 4, keft: 1e-5 / 16, pretrain: 1e-3 / 4)
TrainSettings train_settings_from(const ConfigFile& cfg, Stage stage);

struct FlopsSettings {
  long long context_len = 3072;
  long long question_len = 32;
  long long answer_len = 100;
  long long rate = 8;
  bool kv_cached = true;  // false = naive full-recompute accounting
};

FlopsSettings flops_settings_from(const ConfigFile& cfg);

// document separator used when assembling multi-document contexts
std::string doc_separator_from(const ConfigFile& cfg);

}  // namespace gmsa
