#include "gmsa/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gmsa {

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"model",
       {"vocab", "hidden", "head_dim", "n_query_heads", "n_kv_heads", "intermediate",
        "n_decoder_layers", "n_encoder_layers", "n_lsa_layers", "rope_base", "norm_eps",
        "lora_rank", "lora_alpha", "tcp_max_tokens", "seed", "init_std"}},
      {"training",
       {"learning_rate", "batch_size", "total_steps", "clip_norm", "seed", "weight_decay"}},
      {"compression", {"allowed_rates", "doc_separator"}},
      {"flops", {"context_len", "question_len", "answer_len", "rate", "kv_cached"}},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_text(ss.str(), path);
}

ConfigFile ConfigFile::parse_text(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": unterminated section");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                               ": expected 'key = value'");
    }
    if (section.empty()) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                               ": key outside of any [section]");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (cfg.sections_[section].count(key)) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": duplicate key '" +
                               key + "'");
    }
    cfg.sections_[section][key] = value;
  }
  cfg.validate_known_keys();
  return cfg;
}

void ConfigFile::validate_known_keys() const {
  for (const auto& [section, kv] : sections_) {
    auto it = known_keys().find(section);
    if (it == known_keys().end()) {
      throw std::runtime_error(origin_ + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : kv) {
      (void)value;
      if (!it->second.count(key)) {
        throw std::runtime_error(origin_ + ": unknown key '" + key + "' in section [" + section +
                                 "]");
      }
    }
  }
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) != 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

long long ConfigFile::get_int(const std::string& section, const std::string& key,
                              long long fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  try {
    size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error(origin_ + ": [" + section + "] " + key + " = '" + v +
                             "' is not an integer");
  }
}

double ConfigFile::get_real(const std::string& section, const std::string& key,
                            double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error(origin_ + ": [" + section + "] " + key + " = '" + v +
                             "' is not a number");
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  if (!has(section, key)) return fallback;
  std::string v = get(section, key, "");
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error(origin_ + ": [" + section + "] " + key + " = '" + v +
                           "' is not a boolean");
}

std::vector<int> ConfigFile::get_int_list(const std::string& section, const std::string& key,
                                          const std::vector<int>& fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  std::vector<int> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw std::runtime_error(origin_ + ": [" + section + "] " + key + ": '" + item +
                               "' is not an integer");
    }
  }
  if (out.empty()) {
    throw std::runtime_error(origin_ + ": [" + section + "] " + key + " is an empty list");
  }
  return out;
}

ModelConfig model_config_from(const ConfigFile& cfg) {
  ModelConfig m;
  m.vocab = static_cast<int>(cfg.get_int("model", "vocab", m.vocab));
  m.hidden = static_cast<int>(cfg.get_int("model", "hidden", m.hidden));
  m.head_dim = static_cast<int>(cfg.get_int("model", "head_dim", m.head_dim));
  m.n_q_heads = static_cast<int>(cfg.get_int("model", "n_query_heads", m.n_q_heads));
  m.n_kv_heads = static_cast<int>(cfg.get_int("model", "n_kv_heads", m.n_kv_heads));
  m.intermediate = static_cast<int>(cfg.get_int("model", "intermediate", m.intermediate));
  m.n_dec = static_cast<int>(cfg.get_int("model", "n_decoder_layers", m.n_dec));
  m.n_enc = static_cast<int>(cfg.get_int("model", "n_encoder_layers", m.n_enc));
  m.k_lsa = static_cast<int>(cfg.get_int("model", "n_lsa_layers", m.k_lsa));
  m.rope_base = cfg.get_real("model", "rope_base", m.rope_base);
  m.norm_eps = cfg.get_real("model", "norm_eps", m.norm_eps);
  m.lora_rank = static_cast<int>(cfg.get_int("model", "lora_rank", m.lora_rank));
  m.lora_alpha = cfg.get_real("model", "lora_alpha", m.lora_alpha);
  m.tcp_max_tokens = static_cast<int>(cfg.get_int("model", "tcp_max_tokens", m.tcp_max_tokens));
  m.seed = static_cast<uint64_t>(cfg.get_int("model", "seed", static_cast<long long>(m.seed)));
  m.init_std = cfg.get_real("model", "init_std", m.init_std);
  m.allowed_rates = cfg.get_int_list("compression", "allowed_rates", m.allowed_rates);
  m.validate();
  return m;
}

TrainSettings train_settings_from(const ConfigFile& cfg, Stage stage) {
  TrainSettings t;
  double lr_default = 1e-3;
  int batch_default = 4;
  if (stage == Stage::ae) {
    lr_default = 1e-4;
    batch_default = 4;
  } else if (stage == Stage::keft) {
    lr_default = 1e-5;
    batch_default = 16;
  }
  t.learning_rate = cfg.get_real("training", "learning_rate", lr_default);
  t.batch_size = static_cast<int>(cfg.get_int("training", "batch_size", batch_default));
  t.total_steps = static_cast<int>(cfg.get_int("training", "total_steps", 1000));
  t.clip_norm = cfg.get_real("training", "clip_norm", 2.0);
  t.seed = static_cast<uint64_t>(cfg.get_int("training", "seed", 17));
  t.weight_decay = cfg.get_real("training", "weight_decay", 0.01);
  return t;
}

FlopsSettings flops_settings_from(const ConfigFile& cfg) {
  FlopsSettings f;
  f.context_len = cfg.get_int("flops", "context_len", f.context_len);
  f.question_len = cfg.get_int("flops", "question_len", f.question_len);
  f.answer_len = cfg.get_int("flops", "answer_len", f.answer_len);
  f.rate = cfg.get_int("flops", "rate", f.rate);
  f.kv_cached = cfg.get_bool("flops", "kv_cached", f.kv_cached);
  return f;
}

std::string doc_separator_from(const ConfigFile& cfg) {
  return cfg.get("compression", "doc_separator", ";");
}

}  // namespace gmsa
