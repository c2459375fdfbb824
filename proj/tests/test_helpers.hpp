#pragma once

#include "gmsa/model.hpp"

namespace gmsa_tests {

// small-but-real model dimensions shared across the suites
inline gmsa::ModelConfig toy_model_config() {
  gmsa::ModelConfig cfg;
  cfg.vocab = 260;
  cfg.hidden = 16;
  cfg.head_dim = 8;
  cfg.n_q_heads = 2;
  cfg.n_kv_heads = 2;
  cfg.intermediate = 32;
  cfg.n_dec = 2;
  cfg.n_enc = 2;
  cfg.k_lsa = 1;
  cfg.lora_rank = 4;
  cfg.seed = 99;
  cfg.init_std = 0.08;  // larger than the training default so outputs vary
  return cfg;
}

inline gmsa::Model make_gmsa_model(uint64_t seed = 99) {
  gmsa::ModelConfig cfg = toy_model_config();
  cfg.seed = seed;
  gmsa::Model m = gmsa::Model::create(cfg);
  m.attach_compressor(gmsa::Variant::gmsa);
  return m;
}

inline gmsa::Model make_tcp_model(uint64_t seed = 99) {
  gmsa::ModelConfig cfg = toy_model_config();
  cfg.seed = seed;
  gmsa::Model m = gmsa::Model::create(cfg);
  m.attach_compressor(gmsa::Variant::tcp);
  return m;
}

}  // namespace gmsa_tests
