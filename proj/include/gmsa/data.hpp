#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace gmsa {

// One dataset row. Autoencoding needs only the context; knowledge-extraction
// rows also carry a question and at least one answer.
struct SampleRecord {
  std::string id;
  std::string context;
  std::optional<std::string> question;
  std::vector<std::string> answers;
  nlohmann::json extra;  // unknown fields, preserved on write

  bool is_qa() const { return question.has_value() && !answers.empty(); }
};

// JSONL round trip. Malformed lines and missing required fields raise errors
// naming the line number (1-based) and the field.
std::vector<SampleRecord> read_dataset(const std::string& path);
void write_dataset(const std::string& path, const std::vector<SampleRecord>& records);

// same parse without the required-context rule, for prediction/score files
std::vector<SampleRecord> read_jsonl_loose(const std::string& path);

enum class CorpusKind { restoration, kv_qa };

struct CorpusParams {
  CorpusKind kind = CorpusKind::restoration;
  int count = 64;
  int length = 64;     // restoration: target token (byte) length
  int kv_pairs = 8;    // kv-qa: key=value pairs per context
  uint64_t seed = 0;
  std::string separator = ";";  // joins the key=value "documents"
};

// Seed-deterministic synthetic corpora. Restoration rows are word-like byte
// strings of the requested length; kv-qa rows are distractor-laden key=value
// contexts where the question names one key and the answer is its value,
// which always appears verbatim in the context.
std::vector<SampleRecord> generate_synthetic_dataset(const CorpusParams& params);

}  // namespace gmsa
