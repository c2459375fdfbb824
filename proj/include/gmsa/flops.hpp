#pragma once

#include <cstdint>
#include <string>

#include "gmsa/model.hpp"

namespace gmsa {

// Inference-cost model: per-layer attention + feed-forward operation counts,
// composed into compression, generation, and end-to-end speedup figures.
struct FlopsConfig {
  long long context_len = 3072;  // L
  long long question_len = 32;   // L_q
  long long answer_len = 100;    // L_a
  double rate = 8.0;             // r >= 1
  int n_enc = 8;
  int n_lsa = 1;
  int n_dec = 32;
  int hidden = 4096;        // D
  int head_dim = 128;       // d
  int n_q_heads = 32;       // h^q
  int n_kv_heads = 32;      // h^k
  int intermediate = 11008; // I
  int vocab = 32000;        // V
  bool kv_cached = true;    // false = naive full-recompute decoding accounting

  long long compressed_len() const;  // ceil(L / r)
  void validate() const;

  static FlopsConfig from_model(const ModelConfig& m);
};

struct FlopsReport {
  // compression side
  uint64_t encoder_flops = 0;
  uint64_t lsa_flops = 0;
  uint64_t compression_flops = 0;  // encoder + lsa
  // generation side
  uint64_t prefill_flops = 0;
  uint64_t decode_flops = 0;
  uint64_t lm_head_flops = 0;
  uint64_t generation_flops = 0;  // prefill + decode + head
  uint64_t total_flops = 0;       // compression + generation
  // no-compression reference: full context prefix, no encoder or alignment
  uint64_t baseline_total = 0;
  double speedup_ratio = 0.0;
  std::string notes;

  std::string to_text() const;
};

// single-layer counts at input length L_in
uint64_t attention_flops(long long l_in, const FlopsConfig& cfg);
uint64_t ffn_flops(long long l_in, const FlopsConfig& cfg);

uint64_t compression_flops(const FlopsConfig& cfg);
uint64_t generation_flops(const FlopsConfig& cfg);
FlopsReport speedup_report(const FlopsConfig& cfg);

// Oracle hooks: run real forwards through the tensor library's matmul /
// softmax counter and report the observed total.
uint64_t instrumented_block_flops(const BlockConfig& cfg, int length, uint64_t seed = 1);
uint64_t instrumented_attention_flops(const BlockConfig& cfg, int length, uint64_t seed = 1);
uint64_t instrumented_ffn_flops(const BlockConfig& cfg, int length, uint64_t seed = 1);
uint64_t instrumented_stack_flops(const Model& model, const std::vector<int>& tokens);

}  // namespace gmsa
