#pragma once

#include <string>
#include <vector>

namespace gmsa {

// Byte-level vocabulary: four reserved ids followed by the 256 byte values.
// Round-trips every byte string exactly.
namespace tok {
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kAeIns = 3;  // the single-token autoencoding instruction
constexpr int kByteOffset = 4;
constexpr int kVocabSize = 260;
}  // namespace tok

std::vector<int> tokenize(const std::string& text);

// maps byte tokens back to bytes; reserved ids are dropped
std::string detokenize(const std::vector<int>& ids);

}  // namespace gmsa
