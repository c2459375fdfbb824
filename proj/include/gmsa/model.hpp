#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gmsa/nn.hpp"
#include "gmsa/params.hpp"
#include "gmsa/tokenizer.hpp"

namespace gmsa {

enum class Variant { decoder_only, gmsa, tcp };
enum class Stage { none, pretrain, ae, keft };

std::string to_string(Variant v);
std::string to_string(Stage s);
Variant variant_from_string(const std::string& s);
Stage stage_from_string(const std::string& s);

// Every architecture and training-relevant hyperparameter in one place.
struct ModelConfig {
  int vocab = tok::kVocabSize;
  int hidden = 64;
  int head_dim = 16;
  int n_q_heads = 4;
  int n_kv_heads = 4;
  int intermediate = 128;
  int n_dec = 4;   // decoder depth
  int n_enc = 2;   // encoder depth (copied from the decoder's lower layers)
  int k_lsa = 1;   // alignment depth, k_lsa <= n_dec
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  int lora_rank = 8;
  double lora_alpha = 16.0;
  int tcp_max_tokens = 256;  // learnable compression-token slots
  std::vector<int> allowed_rates{4, 8};
  uint64_t seed = 17;
  double init_std = 0.02;

  BlockConfig block() const;
  void validate() const;
};

// The full parameter set: a decoder language model plus, depending on the
// variant, either the group-merge compressor (encoder + LSA) or the
// appended-token baseline compressor (encoder + CT embeddings + MLP).
struct Model {
  ModelConfig cfg;
  Variant variant = Variant::decoder_only;
  Stage mask_stage = Stage::none;
  Stage trained_through = Stage::none;  // deepest completed training stage

  // decoder
  Tensor embed;      // [V x D]
  std::vector<TransformerBlock> dec_blocks;
  Tensor dec_norm;   // [D]
  Tensor head;       // [D x V]

  // shared encoder (gmsa and tcp variants)
  Tensor enc_embed;
  std::vector<TransformerBlock> enc_blocks;  // carry LoRA adapters on wq/wv
  Tensor enc_norm;

  // gmsa: layer semantic alignment stack
  std::vector<TransformerBlock> lsa_blocks;

  // tcp: learnable appended tokens + projection MLP
  Tensor tcp_tokens;  // [M_max x D]
  Tensor tcp_w1;      // [D x D]
  Tensor tcp_w2;      // [D x D]

  ParameterStore params;

  // fresh decoder-only model, seeded init
  static Model create(const ModelConfig& cfg);

  // copies the decoder's lower layers into the encoder (and layer 0 into the
  // LSA stack for the gmsa variant), attaches fresh LoRA adapters, and
  // registers the new parameters. Requires variant == decoder_only.
  void attach_compressor(Variant v);

  // re-registers every tensor under its canonical name (used after loading)
  void rebuild_param_store();
};

// Sets requires_grad across the whole model for the given training stage:
//   pretrain: decoder only
//   ae (gmsa): encoder LoRA + LSA; ae (tcp): encoder LoRA + CT tokens + MLP
//   keft: decoder wq/wk/wv of every layer
void apply_stage_mask(Model& model, Stage stage);

}  // namespace gmsa
