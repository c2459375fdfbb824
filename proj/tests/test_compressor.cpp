#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "gmsa/compressor.hpp"
#include "test_helpers.hpp"

using namespace gmsa;
using gmsa_tests::make_gmsa_model;
using gmsa_tests::make_tcp_model;
using gmsa_tests::toy_model_config;

namespace {

std::vector<int> some_tokens(int n, uint64_t seed = 5) {
  Rng rng(seed);
  std::vector<int> t(n);
  for (auto& id : t) id = tok::kByteOffset + static_cast<int>(rng.next_index(256));
  return t;
}

}  // namespace

TEST_CASE("encode") {
  Model model = make_gmsa_model();

  SUBCASE("single token yields a finite 1xD state") {
    Tensor h = encode({tok::kByteOffset + 'x'}, model);
    REQUIRE(h.shape() == Shape{1, 16});
    for (double v : h.data()) CHECK(std::isfinite(v));
  }
  SUBCASE("deterministic across calls") {
    auto tokens = some_tokens(9);
    Tensor a = encode(tokens, model);
    Tensor b = encode(tokens, model);
    CHECK(a.data() == b.data());
  }
  SUBCASE("fresh adapters (B = 0) match the adapter-free encoder bitwise") {
    auto tokens = some_tokens(7);
    Tensor with_adapters = encode(tokens, model);
    for (auto& b : model.enc_blocks) {
      b.wq_lora.reset();
      b.wv_lora.reset();
    }
    Tensor without = encode(tokens, model);
    for (size_t i = 0; i < with_adapters.numel(); ++i) {
      CHECK(with_adapters.data()[i] == without.data()[i]);
    }
  }
  SUBCASE("empty input is a usage error") {
    CHECK_THROWS_AS(encode({}, model), std::invalid_argument);
  }
  SUBCASE("out-of-vocab token is rejected") {
    CHECK_THROWS_AS(encode({9999}, model), std::out_of_range);
  }
}

TEST_CASE("lsa initialization copies decoder layer 1") {
  Model model = make_gmsa_model();
  REQUIRE(model.lsa_blocks.size() == 1);
  const auto& lsa = model.lsa_blocks[0];
  const auto& dec = model.dec_blocks[0];
  CHECK(lsa.wq.data() == dec.wq.data());
  CHECK(lsa.wk.data() == dec.wk.data());
  CHECK(lsa.wv.data() == dec.wv.data());
  CHECK(lsa.wo.data() == dec.wo.data());
  CHECK(lsa.w_gate.data() == dec.w_gate.data());
  CHECK(lsa.w_up.data() == dec.w_up.data());
  CHECK(lsa.w_down.data() == dec.w_down.data());
  CHECK(lsa.attn_norm.data() == dec.attn_norm.data());
  CHECK(lsa.ffn_norm.data() == dec.ffn_norm.data());
  // copies, not aliases
  CHECK(lsa.wq.node() != dec.wq.node());
}

TEST_CASE("lsa_align") {
  Model model = make_gmsa_model();
  SUBCASE("single summary row works") {
    Rng rng(1);
    Tensor merged = Tensor::randn({1, 16}, rng, 1.0);
    Tensor soft = lsa_align(merged, model);
    REQUIRE(soft.shape() == Shape{1, 16});
    for (double v : soft.data()) CHECK(std::isfinite(v));
  }
  SUBCASE("uninitialized stack is a state error") {
    Model plain = Model::create(toy_model_config());
    Rng rng(1);
    Tensor merged = Tensor::randn({1, 16}, rng, 1.0);
    CHECK_THROWS_AS(lsa_align(merged, plain), std::logic_error);
  }
}

TEST_CASE("compress length contract") {
  Model model = make_gmsa_model();
  SUBCASE("512 tokens at rate 4 give 128 soft tokens") {
    auto art = compress(some_tokens(512), 4, model);
    CHECK(art.n_groups() == 128);
    CHECK(art.rate == 4);
    CHECK(art.source_len == 512);
    CHECK(art.group_len == 4);
  }
  SUBCASE("510 tokens at rate 4 still give 128 (remainder group of 2)") {
    auto art = compress(some_tokens(510), 4, model);
    CHECK(art.n_groups() == 128);
  }
  SUBCASE("rate 1 keeps the input length") {
    auto art = compress(some_tokens(19), 1, model);
    CHECK(art.n_groups() == 19);
  }
  SUBCASE("rate below 1 is rejected") {
    CHECK_THROWS_AS(compress(some_tokens(4), 0, model), std::invalid_argument);
  }
  SUBCASE("ceil contract holds across lengths and rates") {
    for (int n : {1, 2, 5, 12, 33}) {
      for (int r : {1, 2, 4, 8}) {
        auto art = compress(some_tokens(n), r, model);
        CHECK(art.n_groups() == (n + r - 1) / r);
      }
    }
  }
  SUBCASE("deterministic artifact") {
    auto a = compress(some_tokens(24), 4, model);
    auto b = compress(some_tokens(24), 4, model);
    CHECK(a.soft_tokens.data() == b.soft_tokens.data());
  }
}

TEST_CASE("artifact record serialization") {
  CompressionArtifact art;
  art.soft_tokens = Tensor::from_data({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  art.rate = 4;
  art.source_len = 7;
  art.group_len = 4;
  art.kind = ArtifactKind::gmsa;

  SUBCASE("binary layout") {
    std::ostringstream os(std::ios::binary);
    write_artifact_record(os, art);
    const std::string bytes = os.str();
    REQUIRE(bytes.size() == 4 + 2 + 2 + 4 + 4 + 4 + 6 * 4);
    CHECK(std::memcmp(bytes.data(), "GMSA", 4) == 0);
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version u16 LE
    CHECK(static_cast<unsigned char>(bytes[5]) == 0);
    CHECK(static_cast<unsigned char>(bytes[6]) == 4);  // rate u16 LE
    CHECK(static_cast<unsigned char>(bytes[8]) == 7);  // N_d u32 LE
    CHECK(static_cast<unsigned char>(bytes[12]) == 2); // N_g
    CHECK(static_cast<unsigned char>(bytes[16]) == 3); // D
    float first;
    std::memcpy(&first, bytes.data() + 20, 4);
    CHECK(first == 1.0f);
  }
  SUBCASE("round trip") {
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_artifact_record(ss, art);
    CompressionArtifact back = read_artifact_record(ss);
    CHECK(back.rate == 4);
    CHECK(back.source_len == 7);
    CHECK(back.n_groups() == 2);
    CHECK(back.kind == ArtifactKind::gmsa);
    for (size_t i = 0; i < 6; ++i) {
      CHECK(back.soft_tokens.data()[i] == doctest::Approx(art.soft_tokens.data()[i]));
    }
  }
  SUBCASE("tcp magic") {
    art.kind = ArtifactKind::tcp;
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_artifact_record(ss, art);
    CHECK(ss.str().substr(0, 4) == "TCPA");
    CHECK(read_artifact_record(ss).kind == ArtifactKind::tcp);
  }
  SUBCASE("container with ids") {
    const std::string path = "artifact_container_test.bin";
    write_artifact_file(path, {{"s1", art}, {"s2", art}});
    auto items = read_artifact_file(path);
    REQUIRE(items.size() == 2);
    CHECK(items[0].first == "s1");
    CHECK(items[1].first == "s2");
    CHECK(items[1].second.source_len == 7);
  }
  SUBCASE("garbage stream is rejected") {
    std::stringstream ss("not an artifact at all");
    CHECK_THROWS_AS(read_artifact_record(ss), std::runtime_error);
  }
}

TEST_CASE("tcp compressor") {
  Model tcp = make_tcp_model();
  Model gm = make_gmsa_model();

  SUBCASE("length parity with the group-merge path") {
    for (int n : {512, 510, 64, 3}) {
      for (int r : {4, 8}) {
        auto a = tcp_compress(some_tokens(n), r, tcp);
        auto b = compress(some_tokens(n), r, gm);
        CHECK(a.n_groups() == b.n_groups());
      }
    }
    CHECK(tcp_compress(some_tokens(512), 4, tcp).n_groups() == 128);
  }
  SUBCASE("appended summaries depend on every context token") {
    auto tokens = some_tokens(16);
    auto base = tcp_compress(tokens, 4, tcp);
    auto perturbed_tokens = tokens;
    perturbed_tokens[0] = perturbed_tokens[0] == tok::kByteOffset ? tok::kByteOffset + 1
                                                                  : tok::kByteOffset;
    auto perturbed = tcp_compress(perturbed_tokens, 4, tcp);
    bool changed = false;
    for (size_t i = 0; i < base.soft_tokens.numel(); ++i) {
      changed |= base.soft_tokens.data()[i] != perturbed.soft_tokens.data()[i];
    }
    CHECK(changed);
  }
  SUBCASE("deterministic") {
    auto a = tcp_compress(some_tokens(20), 4, tcp);
    auto b = tcp_compress(some_tokens(20), 4, tcp);
    CHECK(a.soft_tokens.data() == b.soft_tokens.data());
  }
  SUBCASE("mlp bypass exposes the raw appended hidden states") {
    auto raw = tcp_compress(some_tokens(12), 4, tcp, /*bypass_mlp=*/true);
    auto cooked = tcp_compress(some_tokens(12), 4, tcp);
    Tensor expected = matmul(silu(matmul(raw.soft_tokens, tcp.tcp_w1)), tcp.tcp_w2);
    REQUIRE(cooked.soft_tokens.numel() == expected.numel());
    for (size_t i = 0; i < expected.numel(); ++i) {
      CHECK(cooked.soft_tokens.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
    }
  }
  SUBCASE("slot overflow is a config error") {
    ModelConfig cfg = toy_model_config();
    cfg.tcp_max_tokens = 2;
    Model small = Model::create(cfg);
    small.attach_compressor(Variant::tcp);
    CHECK_THROWS_AS(tcp_compress(some_tokens(64), 4, small), std::invalid_argument);
  }
  SUBCASE("wrong variant is a state error") {
    CHECK_THROWS_AS(tcp_compress(some_tokens(8), 4, gm), std::logic_error);
    CHECK_THROWS_AS(compress(some_tokens(8), 4, tcp), std::logic_error);
  }
}
