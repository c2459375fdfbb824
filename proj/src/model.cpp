#include "gmsa/model.hpp"

#include <stdexcept>

namespace gmsa {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::decoder_only: return "decoder-only";
    case Variant::gmsa: return "gmsa";
    case Variant::tcp: return "tcp";
  }
  return "?";
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::none: return "none";
    case Stage::pretrain: return "pretrain";
    case Stage::ae: return "ae";
    case Stage::keft: return "keft";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "decoder-only") return Variant::decoder_only;
  if (s == "gmsa") return Variant::gmsa;
  if (s == "tcp") return Variant::tcp;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

Stage stage_from_string(const std::string& s) {
  if (s == "none") return Stage::none;
  if (s == "pretrain") return Stage::pretrain;
  if (s == "ae") return Stage::ae;
  if (s == "keft") return Stage::keft;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

BlockConfig ModelConfig::block() const {
  BlockConfig b;
  b.hidden = hidden;
  b.head_dim = head_dim;
  b.n_q_heads = n_q_heads;
  b.n_kv_heads = n_kv_heads;
  b.intermediate = intermediate;
  b.rope_base = rope_base;
  b.norm_eps = norm_eps;
  return b;
}

void ModelConfig::validate() const {
  block().validate();
  if (vocab <= 0) throw std::invalid_argument("ModelConfig: vocab must be positive");
  if (n_dec <= 0) throw std::invalid_argument("ModelConfig: n_dec must be positive");
  if (n_enc <= 0 || n_enc > n_dec) {
    throw std::invalid_argument("ModelConfig: n_enc must be in [1, n_dec] (encoder layers are "
                                "copied from the decoder)");
  }
  if (k_lsa <= 0 || k_lsa > n_dec) {
    throw std::invalid_argument("ModelConfig: k_lsa must be in [1, n_dec] (LSA weights are "
                                "copied from the decoder's lower layers)");
  }
  if (allowed_rates.empty()) throw std::invalid_argument("ModelConfig: allowed_rates is empty");
  for (int r : allowed_rates) {
    if (r < 1) throw std::invalid_argument("ModelConfig: rates must be >= 1");
  }
  if (tcp_max_tokens <= 0) throw std::invalid_argument("ModelConfig: tcp_max_tokens must be > 0");
}

namespace {

void register_block(ParameterStore& store, const std::string& prefix, TransformerBlock& b) {
  store.add(prefix + ".wq", b.wq);
  store.add(prefix + ".wk", b.wk);
  store.add(prefix + ".wv", b.wv);
  store.add(prefix + ".wo", b.wo);
  store.add(prefix + ".w_gate", b.w_gate);
  store.add(prefix + ".w_up", b.w_up);
  store.add(prefix + ".w_down", b.w_down);
  store.add(prefix + ".attn_norm", b.attn_norm);
  store.add(prefix + ".ffn_norm", b.ffn_norm);
  if (b.wq_lora) {
    store.add(prefix + ".wq_lora_a", b.wq_lora->a);
    store.add(prefix + ".wq_lora_b", b.wq_lora->b);
  }
  if (b.wv_lora) {
    store.add(prefix + ".wv_lora_a", b.wv_lora->a);
    store.add(prefix + ".wv_lora_b", b.wv_lora->b);
  }
}

}  // namespace

Model Model::create(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(cfg.seed);
  m.embed = Tensor::randn({cfg.vocab, cfg.hidden}, rng, cfg.init_std);
  for (int l = 0; l < cfg.n_dec; ++l) m.dec_blocks.push_back(TransformerBlock::create(cfg.block(), rng, cfg.init_std));
  m.dec_norm = Tensor::full({cfg.hidden}, 1.0);
  m.head = Tensor::randn({cfg.hidden, cfg.vocab}, rng, cfg.init_std);
  m.rebuild_param_store();
  return m;
}

void Model::attach_compressor(Variant v) {
  if (variant != Variant::decoder_only) {
    throw std::logic_error("attach_compressor: model already has a compressor (" +
                           to_string(variant) + ")");
  }
  if (v == Variant::decoder_only) {
    throw std::invalid_argument("attach_compressor: expected gmsa or tcp");
  }
  // a distinct stream so adapter init does not replay decoder init draws
  Rng rng(Rng::mix(cfg.seed, 0x10ad));

  enc_embed = embed.clone();
  for (int l = 0; l < cfg.n_enc; ++l) {
    TransformerBlock b = dec_blocks[l].clone_weights();
    const int qd = cfg.n_q_heads * cfg.head_dim;
    const int kd = cfg.n_kv_heads * cfg.head_dim;
    b.wq_lora = LoraAdapter::create(cfg.hidden, qd, cfg.lora_rank, cfg.lora_alpha, rng);
    b.wv_lora = LoraAdapter::create(cfg.hidden, kd, cfg.lora_rank, cfg.lora_alpha, rng);
    enc_blocks.push_back(std::move(b));
  }
  enc_norm = dec_norm.clone();

  if (v == Variant::gmsa) {
    for (int l = 0; l < cfg.k_lsa; ++l) lsa_blocks.push_back(dec_blocks[l].clone_weights());
  } else {
    tcp_tokens = Tensor::randn({cfg.tcp_max_tokens, cfg.hidden}, rng, cfg.init_std);
    tcp_w1 = Tensor::randn({cfg.hidden, cfg.hidden}, rng, cfg.init_std);
    tcp_w2 = Tensor::randn({cfg.hidden, cfg.hidden}, rng, cfg.init_std);
  }
  variant = v;
  rebuild_param_store();
}

void Model::rebuild_param_store() {
  params = ParameterStore();
  params.add("decoder.embed", embed);
  for (size_t l = 0; l < dec_blocks.size(); ++l) {
    register_block(params, "decoder.block" + std::to_string(l), dec_blocks[l]);
  }
  params.add("decoder.norm", dec_norm);
  params.add("decoder.head", head);
  if (variant != Variant::decoder_only) {
    params.add("encoder.embed", enc_embed);
    for (size_t l = 0; l < enc_blocks.size(); ++l) {
      register_block(params, "encoder.block" + std::to_string(l), enc_blocks[l]);
    }
    params.add("encoder.norm", enc_norm);
  }
  if (variant == Variant::gmsa) {
    for (size_t l = 0; l < lsa_blocks.size(); ++l) {
      register_block(params, "lsa.block" + std::to_string(l), lsa_blocks[l]);
    }
  }
  if (variant == Variant::tcp) {
    params.add("tcp.tokens", tcp_tokens);
    params.add("tcp.mlp_w1", tcp_w1);
    params.add("tcp.mlp_w2", tcp_w2);
  }
}

void apply_stage_mask(Model& model, Stage stage) {
  model.params.set_all_trainable(false);
  switch (stage) {
    case Stage::pretrain:
      model.embed.set_requires_grad(true);
      for (auto& b : model.dec_blocks) {
        b.wq.set_requires_grad(true);
        b.wk.set_requires_grad(true);
        b.wv.set_requires_grad(true);
        b.wo.set_requires_grad(true);
        b.w_gate.set_requires_grad(true);
        b.w_up.set_requires_grad(true);
        b.w_down.set_requires_grad(true);
        b.attn_norm.set_requires_grad(true);
        b.ffn_norm.set_requires_grad(true);
      }
      model.dec_norm.set_requires_grad(true);
      model.head.set_requires_grad(true);
      break;
    case Stage::ae:
      if (model.variant == Variant::decoder_only) {
        throw std::logic_error("apply_stage_mask: ae stage requires a compressor");
      }
      for (auto& b : model.enc_blocks) {
        b.wq_lora->a.set_requires_grad(true);
        b.wq_lora->b.set_requires_grad(true);
        b.wv_lora->a.set_requires_grad(true);
        b.wv_lora->b.set_requires_grad(true);
      }
      if (model.variant == Variant::gmsa) {
        for (auto& b : model.lsa_blocks) {
          b.wq.set_requires_grad(true);
          b.wk.set_requires_grad(true);
          b.wv.set_requires_grad(true);
          b.wo.set_requires_grad(true);
          b.w_gate.set_requires_grad(true);
          b.w_up.set_requires_grad(true);
          b.w_down.set_requires_grad(true);
          b.attn_norm.set_requires_grad(true);
          b.ffn_norm.set_requires_grad(true);
        }
      } else {
        model.tcp_tokens.set_requires_grad(true);
        model.tcp_w1.set_requires_grad(true);
        model.tcp_w2.set_requires_grad(true);
      }
      break;
    case Stage::keft:
      for (auto& b : model.dec_blocks) {
        b.wq.set_requires_grad(true);
        b.wk.set_requires_grad(true);
        b.wv.set_requires_grad(true);
      }
      break;
    case Stage::none:
      break;
  }
  model.mask_stage = stage;
}

}  // namespace gmsa
