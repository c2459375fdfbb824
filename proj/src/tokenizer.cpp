#include "gmsa/tokenizer.hpp"

#include <stdexcept>

namespace gmsa {

std::vector<int> tokenize(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(tok::kByteOffset + c);
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= tok::kVocabSize) {
      throw std::out_of_range("detokenize: id " + std::to_string(id) + " outside vocabulary");
    }
    if (id >= tok::kByteOffset) out.push_back(static_cast<char>(id - tok::kByteOffset));
  }
  return out;
}

}  // namespace gmsa
