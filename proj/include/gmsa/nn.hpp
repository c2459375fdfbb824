#pragma once

#include <optional>
#include <vector>

#include "gmsa/rng.hpp"
#include "gmsa/tensor.hpp"

namespace gmsa {

// Shared shape parameters of every transformer block in the project.
struct BlockConfig {
  int hidden = 64;         // D
  int head_dim = 16;       // d
  int n_q_heads = 4;       // h^q
  int n_kv_heads = 4;      // h^k, divides h^q (grouped-query attention)
  int intermediate = 128;  // I
  double rope_base = 10000.0;
  double norm_eps = 1e-5;

  void validate() const;
};

// Low-rank additive adapter on one projection. B starts at zero so a fresh
// adapter leaves the base layer's output untouched.
struct LoraAdapter {
  Tensor a;  // [in x r]
  Tensor b;  // [r x out]
  double scaling = 2.0;  // alpha / r

  static LoraAdapter create(int in_dim, int out_dim, int rank, double alpha, Rng& rng);
};

// x * w, plus scaling * (x * a) * b when an adapter is attached.
Tensor lora_linear(const Tensor& x, const Tensor& w, const std::optional<LoraAdapter>& adapter);

// Pre-norm LLaMA-style block: RMSNorm -> causal attention -> residual,
// RMSNorm -> SwiGLU FFN -> residual.
struct TransformerBlock {
  Tensor wq;  // [D x h^q d]
  Tensor wk;  // [D x h^k d]
  Tensor wv;  // [D x h^k d]
  Tensor wo;  // [h^q d x D]
  Tensor w_gate;  // [D x I]
  Tensor w_up;    // [D x I]
  Tensor w_down;  // [I x D]
  Tensor attn_norm;  // [D]
  Tensor ffn_norm;   // [D]
  std::optional<LoraAdapter> wq_lora;
  std::optional<LoraAdapter> wv_lora;

  static TransformerBlock create(const BlockConfig& cfg, Rng& rng, double init_std = 0.02);

  // independent copy of all weights, adapters excluded
  TransformerBlock clone_weights() const;
};

// Rope-rotated K/V rows kept per layer during incremental decoding.
struct LayerKV {
  Tensor k;  // [len x h^k d]
  Tensor v;
  int len = 0;
};

struct KVCache {
  std::vector<LayerKV> layers;
  explicit KVCache(size_t n_layers) : layers(n_layers) {}
};

// Causal multi-head attention over h (one layer, pre-normed input expected by
// caller is raw h; normalization happens inside). positions are the absolute
// sequence positions of the n new rows; cached rows precede them.
Tensor causal_attention(const Tensor& h, const TransformerBlock& block, const BlockConfig& cfg,
                        const std::vector<int>& positions, LayerKV* cache);

Tensor swiglu_ffn(const Tensor& x, const TransformerBlock& block);

// full block: h + attn(norm(h)) then + ffn(norm(.))
Tensor block_forward(const Tensor& h, const TransformerBlock& block, const BlockConfig& cfg,
                     const std::vector<int>& positions, LayerKV* cache);

// runs a stack of blocks; cache may be null (training / full recompute)
Tensor run_stack(const Tensor& h, const std::vector<TransformerBlock>& blocks,
                 const BlockConfig& cfg, const std::vector<int>& positions, KVCache* cache);

}  // namespace gmsa
