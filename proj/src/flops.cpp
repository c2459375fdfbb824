#include "gmsa/flops.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gmsa/nn.hpp"

namespace gmsa {

long long FlopsConfig::compressed_len() const {
  return static_cast<long long>(std::ceil(static_cast<double>(context_len) / rate));
}

void FlopsConfig::validate() const {
  if (rate < 1.0) throw std::invalid_argument("FlopsConfig: rate must be >= 1");
  if (context_len < 1 || question_len < 0 || answer_len < 1) {
    throw std::invalid_argument("FlopsConfig: lengths must be positive");
  }
  if (n_dec < 1 || hidden < 1 || head_dim < 1 || n_q_heads < 1 || n_kv_heads < 1 ||
      intermediate < 1 || vocab < 1 || n_enc < 0 || n_lsa < 0) {
    throw std::invalid_argument("FlopsConfig: structural counts out of range");
  }
}

FlopsConfig FlopsConfig::from_model(const ModelConfig& m) {
  FlopsConfig f;
  f.n_enc = m.n_enc;
  f.n_lsa = m.k_lsa;
  f.n_dec = m.n_dec;
  f.hidden = m.hidden;
  f.head_dim = m.head_dim;
  f.n_q_heads = m.n_q_heads;
  f.n_kv_heads = m.n_kv_heads;
  f.intermediate = m.intermediate;
  f.vocab = m.vocab;
  return f;
}

namespace {

using u64 = uint64_t;

void check_len(long long l_in, const char* who) {
  if (l_in < 1) throw std::invalid_argument(std::string(who) + ": input length must be >= 1");
}

// projection cost of one new token
u64 qkv_flops_per_token(const FlopsConfig& c) {
  return 2ull * c.hidden * c.head_dim * c.n_q_heads + 4ull * c.hidden * c.head_dim * c.n_kv_heads;
}

u64 out_proj_flops_per_token(const FlopsConfig& c) {
  return 2ull * c.head_dim * c.n_q_heads * c.hidden;
}

// one cached decode step whose attention spans `span` positions
u64 decode_step_attention(const FlopsConfig& c, long long span) {
  const u64 s = static_cast<u64>(span);
  return qkv_flops_per_token(c) + 2ull * c.n_q_heads * s * c.head_dim  // q k^T
         + static_cast<u64>(c.n_q_heads) * s                           // softmax row
         + 2ull * c.n_q_heads * s * c.head_dim                         // attention * v
         + out_proj_flops_per_token(c);
}

}  // namespace

uint64_t attention_flops(long long l_in, const FlopsConfig& cfg) {
  check_len(l_in, "attention_flops");
  const u64 l = static_cast<u64>(l_in);
  const u64 qkv = 2ull * l * cfg.hidden * cfg.head_dim * cfg.n_q_heads +
                  4ull * l * cfg.hidden * cfg.head_dim * cfg.n_kv_heads;
  const u64 qk = 2ull * cfg.n_q_heads * l * l * cfg.head_dim;
  const u64 softmax = static_cast<u64>(cfg.n_q_heads) * l * l;
  const u64 av = 2ull * cfg.n_q_heads * l * l * cfg.head_dim;
  const u64 out = 2ull * l * cfg.head_dim * cfg.n_q_heads * cfg.hidden;
  return qkv + qk + softmax + av + out;
}

uint64_t ffn_flops(long long l_in, const FlopsConfig& cfg) {
  check_len(l_in, "ffn_flops");
  // gate + up pair, then down
  return 6ull * static_cast<u64>(l_in) * cfg.hidden * cfg.intermediate;
}

uint64_t compression_flops(const FlopsConfig& cfg) {
  cfg.validate();
  u64 total = 0;
  if (cfg.n_enc > 0) {
    total += static_cast<u64>(cfg.n_enc) *
             (attention_flops(cfg.context_len, cfg) + ffn_flops(cfg.context_len, cfg));
  }
  if (cfg.n_lsa > 0) {
    const long long merged = cfg.compressed_len();
    total += static_cast<u64>(cfg.n_lsa) * (attention_flops(merged, cfg) + ffn_flops(merged, cfg));
  }
  return total;
}

uint64_t generation_flops(const FlopsConfig& cfg) {
  cfg.validate();
  const long long prefix = cfg.compressed_len() + cfg.question_len;
  u64 total = 0;
  if (cfg.kv_cached) {
    // one-time prefill over the prefix, then per-token cached steps; step i
    // attends over prefix + i positions
    total += static_cast<u64>(cfg.n_dec) *
             (attention_flops(prefix, cfg) + ffn_flops(prefix, cfg));
    for (long long i = 1; i <= cfg.answer_len; ++i) {
      total += static_cast<u64>(cfg.n_dec) * (decode_step_attention(cfg, prefix + i) + ffn_flops(1, cfg));
    }
  } else {
    // naive accounting: every step reprocesses the whole sequence
    for (long long i = 1; i <= cfg.answer_len; ++i) {
      total += static_cast<u64>(cfg.n_dec) *
               (attention_flops(prefix + i, cfg) + ffn_flops(prefix + i, cfg));
    }
  }
  return total;
}

// output head, itemized separately: 2*D*V per generated token
static uint64_t head_flops(const FlopsConfig& cfg) {
  return 2ull * static_cast<uint64_t>(cfg.answer_len) * cfg.hidden * cfg.vocab;
}

FlopsReport speedup_report(const FlopsConfig& cfg) {
  cfg.validate();
  FlopsReport r;

  const long long merged = cfg.compressed_len();
  r.encoder_flops = cfg.n_enc > 0
                        ? static_cast<u64>(cfg.n_enc) * (attention_flops(cfg.context_len, cfg) +
                                                         ffn_flops(cfg.context_len, cfg))
                        : 0;
  r.lsa_flops = cfg.n_lsa > 0 ? static_cast<u64>(cfg.n_lsa) *
                                    (attention_flops(merged, cfg) + ffn_flops(merged, cfg))
                              : 0;
  r.compression_flops = r.encoder_flops + r.lsa_flops;

  const long long prefix = merged + cfg.question_len;
  if (cfg.kv_cached) {
    r.prefill_flops = static_cast<u64>(cfg.n_dec) *
                      (attention_flops(prefix, cfg) + ffn_flops(prefix, cfg));
    u64 decode = 0;
    for (long long i = 1; i <= cfg.answer_len; ++i) {
      decode += static_cast<u64>(cfg.n_dec) *
                (decode_step_attention(cfg, prefix + i) + ffn_flops(1, cfg));
    }
    r.decode_flops = decode;
  } else {
    u64 decode = 0;
    for (long long i = 1; i <= cfg.answer_len; ++i) {
      decode += static_cast<u64>(cfg.n_dec) *
                (attention_flops(prefix + i, cfg) + ffn_flops(prefix + i, cfg));
    }
    r.decode_flops = decode;
  }
  r.lm_head_flops = head_flops(cfg);
  r.generation_flops = r.prefill_flops + r.decode_flops + r.lm_head_flops;
  r.total_flops = r.compression_flops + r.generation_flops;

  // uncompressed reference: rate 1, no encoder or alignment stack
  FlopsConfig base = cfg;
  base.rate = 1.0;
  base.n_enc = 0;
  base.n_lsa = 0;
  r.baseline_total = generation_flops(base) + head_flops(base);
  r.speedup_ratio = static_cast<double>(r.baseline_total) / static_cast<double>(r.total_flops);
  r.notes = "normalization, residual adds, and rotary rotations excluded; adapter deltas excluded";
  return r;
}

std::string FlopsReport::to_text() const {
  std::ostringstream os;
  os << "compression.encoder_flops = " << encoder_flops << "\n"
     << "compression.lsa_flops = " << lsa_flops << "\n"
     << "compression.total = " << compression_flops << "\n"
     << "generation.prefill_flops = " << prefill_flops << "\n"
     << "generation.decode_flops = " << decode_flops << "\n"
     << "generation.lm_head_flops = " << lm_head_flops << "\n"
     << "generation.total = " << generation_flops << "\n"
     << "total = " << total_flops << "\n"
     << "baseline_total = " << baseline_total << "\n"
     << "speedup_ratio = " << speedup_ratio << "\n"
     << "bert_score = unavailable\n"
     << "notes = " << notes << "\n";
  return os.str();
}

// ------------------------------ instrumentation -----------------------------

namespace {

std::vector<int> iota_positions(int n) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace

uint64_t instrumented_attention_flops(const BlockConfig& cfg, int length, uint64_t seed) {
  NoGradGuard ng;
  Rng rng(seed);
  TransformerBlock block = TransformerBlock::create(cfg, rng, 0.1);
  Tensor h = Tensor::randn({length, cfg.hidden}, rng, 1.0);
  reset_flop_counter();
  causal_attention(h, block, cfg, iota_positions(length), nullptr);
  return flop_counter();
}

uint64_t instrumented_ffn_flops(const BlockConfig& cfg, int length, uint64_t seed) {
  NoGradGuard ng;
  Rng rng(seed);
  TransformerBlock block = TransformerBlock::create(cfg, rng, 0.1);
  Tensor h = Tensor::randn({length, cfg.hidden}, rng, 1.0);
  reset_flop_counter();
  swiglu_ffn(h, block);
  return flop_counter();
}

uint64_t instrumented_block_flops(const BlockConfig& cfg, int length, uint64_t seed) {
  NoGradGuard ng;
  Rng rng(seed);
  TransformerBlock block = TransformerBlock::create(cfg, rng, 0.1);
  Tensor h = Tensor::randn({length, cfg.hidden}, rng, 1.0);
  reset_flop_counter();
  block_forward(h, block, cfg, iota_positions(length), nullptr);
  return flop_counter();
}

uint64_t instrumented_stack_flops(const Model& model, const std::vector<int>& tokens) {
  NoGradGuard ng;
  reset_flop_counter();
  Tensor h = embedding_rows(model.embed, tokens);
  run_stack(h, model.dec_blocks, model.cfg.block(), iota_positions(static_cast<int>(tokens.size())),
            nullptr);
  return flop_counter();
}

}  // namespace gmsa
