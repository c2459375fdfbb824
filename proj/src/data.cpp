#include "gmsa/data.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "gmsa/rng.hpp"

namespace gmsa {

using nlohmann::json;

namespace {

std::vector<SampleRecord> read_jsonl(const std::string& path, bool require_context) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset '" + path + "'");
  std::vector<SampleRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("dataset '" + path + "' line " + std::to_string(line_no) +
                               ": malformed JSON (" + e.what() + ")");
    }
    if (require_context && (!j.contains("context") || !j["context"].is_string())) {
      throw std::runtime_error("dataset '" + path + "' line " + std::to_string(line_no) +
                               ": missing required field 'context'");
    }
    SampleRecord rec;
    if (j.contains("context")) rec.context = j["context"].get<std::string>();
    rec.id = j.value("id", "line-" + std::to_string(line_no));
    if (j.contains("question")) {
      if (!j["question"].is_string()) {
        throw std::runtime_error("dataset '" + path + "' line " + std::to_string(line_no) +
                                 ": field 'question' must be a string");
      }
      rec.question = j["question"].get<std::string>();
    }
    if (j.contains("answers")) {
      if (!j["answers"].is_array()) {
        throw std::runtime_error("dataset '" + path + "' line " + std::to_string(line_no) +
                                 ": field 'answers' must be an array");
      }
      for (const auto& a : j["answers"]) rec.answers.push_back(a.get<std::string>());
    }
    for (auto& [key, value] : j.items()) {
      if (key != "id" && key != "context" && key != "question" && key != "answers") {
        rec.extra[key] = value;
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

std::vector<SampleRecord> read_dataset(const std::string& path) { return read_jsonl(path, true); }

std::vector<SampleRecord> read_jsonl_loose(const std::string& path) {
  return read_jsonl(path, false);
}

void write_dataset(const std::string& path, const std::vector<SampleRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& rec : records) {
    json j = rec.extra.is_object() ? rec.extra : json::object();
    j["id"] = rec.id;
    j["context"] = rec.context;
    if (rec.question) j["question"] = *rec.question;
    if (!rec.answers.empty()) j["answers"] = rec.answers;
    os << j.dump() << "\n";
  }
}

namespace {

std::string random_word(Rng& rng, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(rng.next_index(max_len - min_len + 1));
  std::string w(len, 'a');
  for (auto& c : w) c = static_cast<char>('a' + rng.next_index(26));
  return w;
}

std::vector<SampleRecord> make_restoration(const CorpusParams& p, Rng& rng) {
  std::vector<SampleRecord> out;
  for (int i = 0; i < p.count; ++i) {
    std::string text;
    while (static_cast<int>(text.size()) < p.length) {
      if (!text.empty()) text += " ";
      text += random_word(rng, 2, 8);
    }
    text.resize(p.length);  // exact byte length; one byte == one token
    SampleRecord rec;
    rec.id = "rest-" + std::to_string(p.seed) + "-" + std::to_string(i);
    rec.context = std::move(text);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<SampleRecord> make_kv_qa(const CorpusParams& p, Rng& rng) {
  std::vector<SampleRecord> out;
  for (int i = 0; i < p.count; ++i) {
    std::set<std::string> used;
    std::vector<std::pair<std::string, std::string>> pairs;
    while (static_cast<int>(pairs.size()) < p.kv_pairs) {
      std::string key = random_word(rng, 2, 2);
      if (!used.insert(key).second) continue;  // keys unique within a context
      pairs.emplace_back(std::move(key), random_word(rng, 3, 3));
    }
    std::string context;
    for (const auto& [k, v] : pairs) {
      if (!context.empty()) context += p.separator;
      context += k + "=" + v;
    }
    const size_t asked = rng.next_index(pairs.size());
    SampleRecord rec;
    rec.id = "kv-" + std::to_string(p.seed) + "-" + std::to_string(i);
    rec.context = std::move(context);
    rec.question = pairs[asked].first + "=";
    rec.answers = {pairs[asked].second};
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

std::vector<SampleRecord> generate_synthetic_dataset(const CorpusParams& params) {
  if (params.count < 1) throw std::invalid_argument("generate_synthetic_dataset: count must be >= 1");
  if (params.length < 1) throw std::invalid_argument("generate_synthetic_dataset: length must be >= 1");
  if (params.kv_pairs < 1 || params.kv_pairs > 600) {
    throw std::invalid_argument("generate_synthetic_dataset: kv_pairs out of range");
  }
  Rng rng(Rng::mix(params.seed, params.kind == CorpusKind::restoration ? 1 : 2));
  return params.kind == CorpusKind::restoration ? make_restoration(params, rng)
                                                : make_kv_qa(params, rng);
}

}  // namespace gmsa
