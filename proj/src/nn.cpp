#include "gmsa/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gmsa {

void BlockConfig::validate() const {
  if (hidden <= 0 || head_dim <= 0 || n_q_heads <= 0 || n_kv_heads <= 0 || intermediate <= 0) {
    throw std::invalid_argument("BlockConfig: all dimensions must be positive");
  }
  if (hidden != n_q_heads * head_dim) {
    throw std::invalid_argument("BlockConfig: hidden (" + std::to_string(hidden) +
                                ") must equal n_q_heads * head_dim (" +
                                std::to_string(n_q_heads * head_dim) + ")");
  }
  if (n_q_heads % n_kv_heads != 0) {
    throw std::invalid_argument("BlockConfig: n_q_heads must be a multiple of n_kv_heads");
  }
  if (head_dim % 2 != 0) {
    throw std::invalid_argument("BlockConfig: head_dim must be even for rotary embedding");
  }
}

LoraAdapter LoraAdapter::create(int in_dim, int out_dim, int rank, double alpha, Rng& rng) {
  if (rank <= 0) throw std::invalid_argument("LoraAdapter: rank must be positive");
  LoraAdapter ad;
  ad.a = Tensor::randn({in_dim, rank}, rng, 0.02);
  ad.b = Tensor::zeros({rank, out_dim});
  ad.scaling = alpha / rank;
  return ad;
}

Tensor lora_linear(const Tensor& x, const Tensor& w, const std::optional<LoraAdapter>& adapter) {
  Tensor base = matmul(x, w);
  if (!adapter) return base;
  if (adapter->a.shape()[0] != w.shape()[0] || adapter->b.shape()[1] != w.shape()[1]) {
    throw std::invalid_argument("lora_linear: adapter shapes do not match the base weight");
  }
  Tensor delta = scale(matmul(matmul(x, adapter->a), adapter->b), adapter->scaling);
  return add(base, delta);
}

TransformerBlock TransformerBlock::create(const BlockConfig& cfg, Rng& rng, double init_std) {
  cfg.validate();
  TransformerBlock b;
  const int qd = cfg.n_q_heads * cfg.head_dim;
  const int kd = cfg.n_kv_heads * cfg.head_dim;
  b.wq = Tensor::randn({cfg.hidden, qd}, rng, init_std);
  b.wk = Tensor::randn({cfg.hidden, kd}, rng, init_std);
  b.wv = Tensor::randn({cfg.hidden, kd}, rng, init_std);
  b.wo = Tensor::randn({qd, cfg.hidden}, rng, init_std);
  b.w_gate = Tensor::randn({cfg.hidden, cfg.intermediate}, rng, init_std);
  b.w_up = Tensor::randn({cfg.hidden, cfg.intermediate}, rng, init_std);
  b.w_down = Tensor::randn({cfg.intermediate, cfg.hidden}, rng, init_std);
  b.attn_norm = Tensor::full({cfg.hidden}, 1.0);
  b.ffn_norm = Tensor::full({cfg.hidden}, 1.0);
  return b;
}

TransformerBlock TransformerBlock::clone_weights() const {
  TransformerBlock b;
  b.wq = wq.clone();
  b.wk = wk.clone();
  b.wv = wv.clone();
  b.wo = wo.clone();
  b.w_gate = w_gate.clone();
  b.w_up = w_up.clone();
  b.w_down = w_down.clone();
  b.attn_norm = attn_norm.clone();
  b.ffn_norm = ffn_norm.clone();
  return b;
}

Tensor causal_attention(const Tensor& h, const TransformerBlock& block, const BlockConfig& cfg,
                        const std::vector<int>& positions, LayerKV* cache) {
  const int n = h.shape()[0];
  if (static_cast<int>(positions.size()) != n) {
    throw std::invalid_argument("causal_attention: positions length does not match rows");
  }
  for (size_t i = 1; i < positions.size(); ++i) {
    if (positions[i] <= positions[i - 1]) {
      throw std::invalid_argument("causal_attention: positions must be strictly increasing");
    }
  }
  const int d = cfg.head_dim;

  Tensor q = lora_linear(h, block.wq, block.wq_lora);
  Tensor k = lora_linear(h, block.wk, std::nullopt);
  Tensor v = lora_linear(h, block.wv, block.wv_lora);
  q = rope_apply(q, positions, d, cfg.rope_base);
  k = rope_apply(k, positions, d, cfg.rope_base);

  int cached = 0;
  Tensor k_all = k, v_all = v;
  if (cache) {
    if (cache->len > 0) {
      if (cache->k.shape()[1] != k.shape()[1]) {
        throw std::invalid_argument("causal_attention: cache width does not match kv head count");
      }
      k_all = concat_rows(cache->k, k);
      v_all = concat_rows(cache->v, v);
      cached = cache->len;
    }
    cache->k = k_all;
    cache->v = v_all;
    cache->len = cached + n;
  }
  const int total = cached + n;

  // token i may attend cache rows and new rows up to itself
  SoftmaxMask mask(static_cast<size_t>(n) * total, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= cached + i; ++j) mask[static_cast<size_t>(i) * total + j] = 1;
  }

  const int group = cfg.n_q_heads / cfg.n_kv_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(cfg.n_q_heads);
  for (int qh = 0; qh < cfg.n_q_heads; ++qh) {
    const int kvh = qh / group;
    Tensor qi = col_slice(q, qh * d, d);
    Tensor ki = col_slice(k_all, kvh * d, d);
    Tensor vi = col_slice(v_all, kvh * d, d);
    Tensor scores = scale(matmul_nt(qi, ki), inv_sqrt_d);
    Tensor probs = row_softmax(scores, &mask);
    head_outputs.push_back(matmul(probs, vi));
  }
  return matmul(col_concat(head_outputs), block.wo);
}

Tensor swiglu_ffn(const Tensor& x, const TransformerBlock& block) {
  Tensor gate = silu(matmul(x, block.w_gate));
  Tensor up = matmul(x, block.w_up);
  return matmul(mul(gate, up), block.w_down);
}

Tensor block_forward(const Tensor& h, const TransformerBlock& block, const BlockConfig& cfg,
                     const std::vector<int>& positions, LayerKV* cache) {
  Tensor attn_in = rmsnorm(h, block.attn_norm, cfg.norm_eps);
  Tensor h1 = add(h, causal_attention(attn_in, block, cfg, positions, cache));
  Tensor ffn_in = rmsnorm(h1, block.ffn_norm, cfg.norm_eps);
  return add(h1, swiglu_ffn(ffn_in, block));
}

Tensor run_stack(const Tensor& h, const std::vector<TransformerBlock>& blocks,
                 const BlockConfig& cfg, const std::vector<int>& positions, KVCache* cache) {
  if (cache && cache->layers.size() != blocks.size()) {
    throw std::invalid_argument("run_stack: cache has " + std::to_string(cache->layers.size()) +
                                " layers for " + std::to_string(blocks.size()) + " blocks");
  }
  Tensor cur = h;
  for (size_t l = 0; l < blocks.size(); ++l) {
    cur = block_forward(cur, blocks[l], cfg, positions, cache ? &cache->layers[l] : nullptr);
  }
  return cur;
}

}  // namespace gmsa
