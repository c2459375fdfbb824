#pragma once

#include <utility>
#include <vector>

#include "gmsa/model.hpp"

namespace gmsa {

// One decoder invocation: an optional soft-token prefix entering layer 0
// directly, discrete prompt tokens (the AE instruction, or the question),
// and the forced/decoded token segment the loss covers.
//
// Under teacher forcing the input sequence feeds prefix + targets[0..T-2];
// targets[T-1] is predicted by the final row, so a trailing EOS target needs
// no input row.
struct DecoderInput {
  enum class Mode { ae, ke };
  Mode mode = Mode::ae;
  Tensor soft_prefix;            // [k x D], undefined for a plain LM pass
  std::vector<int> prompt_ids;   // AE: {AE_INS}; KE: question ids
  std::vector<int> targets;      // loss targets (teacher forcing) or empty

  static DecoderInput ae(Tensor soft, std::vector<int> reconstruction_targets);
  static DecoderInput ke(Tensor soft, std::vector<int> question, std::vector<int> answer_targets);
  // plain next-token LM input (no soft prefix, no instruction)
  static DecoderInput lm(std::vector<int> prompt, std::vector<int> targets);

  void validate(int hidden) const;
  int prefix_rows() const { return soft_prefix.defined() ? soft_prefix.shape()[0] : 0; }
};

// Single causal pass; returns logits only at the positions predicting the
// target segment: shape [|targets| x V].
Tensor forward_with_soft_prefix(const DecoderInput& input, const Model& model);

// total and per-token -log p over the target positions (no autodiff)
std::pair<double, std::vector<double>> sequence_nll(const DecoderInput& input, const Model& model);

// Argmax decoding with a KV cache until eos or max_len tokens; ties break
// toward the lowest token id. The returned list includes the eos token when
// one was emitted.
std::vector<int> greedy_generate(const DecoderInput& prefix, const Model& model, int max_len,
                                 int eos = tok::kEos);

}  // namespace gmsa
