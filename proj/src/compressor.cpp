#include "gmsa/compressor.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace gmsa {

namespace {

std::vector<int> iota_positions(int n, int start = 0) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), start);
  return p;
}

void check_rate(int rate) {
  if (rate < 1) throw std::invalid_argument("compress: rate must be >= 1, got " + std::to_string(rate));
}

}  // namespace

Tensor encode(const std::vector<int>& tokens, const Model& model) {
  if (model.variant == Variant::decoder_only) {
    throw std::logic_error("encode: model has no encoder attached");
  }
  if (tokens.empty()) throw std::invalid_argument("encode: empty input");
  Tensor h = embedding_rows(model.enc_embed, tokens);
  h = run_stack(h, model.enc_blocks, model.cfg.block(), iota_positions(h.rows()), nullptr);
  return rmsnorm(h, model.enc_norm, model.cfg.norm_eps);
}

Tensor group_merge(const Tensor& h, int group_len) { return group_mean_rows(h, group_len); }

Tensor lsa_align(const Tensor& h_merged, const Model& model) {
  if (model.variant != Variant::gmsa || model.lsa_blocks.empty()) {
    throw std::logic_error("lsa_align: LSA stack was never initialized from the decoder");
  }
  return run_stack(h_merged, model.lsa_blocks, model.cfg.block(),
                   iota_positions(h_merged.rows()), nullptr);
}

CompressionArtifact compress(const std::vector<int>& tokens, int rate, const Model& model) {
  check_rate(rate);
  Tensor h = encode(tokens, model);
  Tensor merged = group_merge(h, rate);
  CompressionArtifact art;
  art.soft_tokens = lsa_align(merged, model);
  art.rate = rate;
  art.source_len = static_cast<int>(tokens.size());
  art.group_len = rate;
  art.kind = ArtifactKind::gmsa;
  return art;
}

CompressionArtifact tcp_compress(const std::vector<int>& tokens, int rate, const Model& model,
                                 bool bypass_mlp) {
  check_rate(rate);
  if (model.variant != Variant::tcp) {
    throw std::logic_error("tcp_compress: model does not carry the tcp compressor");
  }
  if (tokens.empty()) throw std::invalid_argument("tcp_compress: empty input");
  const int n = static_cast<int>(tokens.size());
  const int m = (n + rate - 1) / rate;
  if (m > model.cfg.tcp_max_tokens) {
    throw std::invalid_argument("tcp_compress: " + std::to_string(m) +
                                " appended tokens exceed tcp_max_tokens of " +
                                std::to_string(model.cfg.tcp_max_tokens));
  }
  Tensor text = embedding_rows(model.enc_embed, tokens);
  Tensor appended = slice_rows(model.tcp_tokens, 0, m);
  Tensor h = concat_rows(text, appended);
  h = run_stack(h, model.enc_blocks, model.cfg.block(), iota_positions(h.rows()), nullptr);
  h = rmsnorm(h, model.enc_norm, model.cfg.norm_eps);
  Tensor summary = slice_rows(h, n, m);
  CompressionArtifact art;
  if (bypass_mlp) {
    art.soft_tokens = summary;
  } else {
    art.soft_tokens = matmul(silu(matmul(summary, model.tcp_w1)), model.tcp_w2);
  }
  art.rate = rate;
  art.source_len = n;
  art.group_len = rate;
  art.kind = ArtifactKind::tcp;
  return art;
}

CompressionArtifact compress_with(const Model& model, const std::vector<int>& tokens, int rate) {
  switch (model.variant) {
    case Variant::gmsa: return compress(tokens, rate, model);
    case Variant::tcp: return tcp_compress(tokens, rate, model);
    default:
      throw std::logic_error("compress_with: model has no compressor attached");
  }
}

// ------------------------------- serialization ------------------------------

namespace {

constexpr uint16_t kArtifactVersion = 1;

template <class T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw std::runtime_error("artifact: unexpected end of stream");
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

void write_f32_le(std::ostream& os, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  write_le<uint32_t>(os, bits);
}

float read_f32_le(std::istream& is) {
  uint32_t bits = read_le<uint32_t>(is);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

}  // namespace

void write_artifact_record(std::ostream& os, const CompressionArtifact& artifact) {
  const char* magic = artifact.kind == ArtifactKind::gmsa ? "GMSA" : "TCPA";
  os.write(magic, 4);
  write_le<uint16_t>(os, kArtifactVersion);
  write_le<uint16_t>(os, static_cast<uint16_t>(artifact.rate));
  write_le<uint32_t>(os, static_cast<uint32_t>(artifact.source_len));
  write_le<uint32_t>(os, static_cast<uint32_t>(artifact.n_groups()));
  write_le<uint32_t>(os, static_cast<uint32_t>(artifact.soft_tokens.shape()[1]));
  for (double v : artifact.soft_tokens.data()) write_f32_le(os, static_cast<float>(v));
}

CompressionArtifact read_artifact_record(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is) throw std::runtime_error("artifact: unexpected end of stream");
  CompressionArtifact art;
  if (std::memcmp(magic, "GMSA", 4) == 0) {
    art.kind = ArtifactKind::gmsa;
  } else if (std::memcmp(magic, "TCPA", 4) == 0) {
    art.kind = ArtifactKind::tcp;
  } else {
    throw std::runtime_error("artifact: bad magic");
  }
  const uint16_t version = read_le<uint16_t>(is);
  if (version != kArtifactVersion) {
    throw std::runtime_error("artifact: version " + std::to_string(version) +
                             " not supported (expected " + std::to_string(kArtifactVersion) + ")");
  }
  art.rate = read_le<uint16_t>(is);
  art.source_len = static_cast<int>(read_le<uint32_t>(is));
  const int groups = static_cast<int>(read_le<uint32_t>(is));
  const int width = static_cast<int>(read_le<uint32_t>(is));
  art.group_len = art.rate;
  std::vector<double> data(static_cast<size_t>(groups) * width);
  for (auto& v : data) v = static_cast<double>(read_f32_le(is));
  art.soft_tokens = Tensor::from_data({groups, width}, std::move(data));
  return art;
}

void write_artifact_file(const std::string& path,
                         const std::vector<std::pair<std::string, CompressionArtifact>>& items) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write("GMSC", 4);
  write_le<uint32_t>(os, static_cast<uint32_t>(items.size()));
  for (const auto& [id, art] : items) {
    write_le<uint32_t>(os, static_cast<uint32_t>(id.size()));
    os.write(id.data(), static_cast<std::streamsize>(id.size()));
    write_artifact_record(os, art);
  }
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<std::pair<std::string, CompressionArtifact>> read_artifact_file(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GMSC", 4) != 0) {
    throw std::runtime_error("'" + path + "' is not an artifact container");
  }
  const uint32_t count = read_le<uint32_t>(is);
  std::vector<std::pair<std::string, CompressionArtifact>> items;
  items.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t id_len = read_le<uint32_t>(is);
    std::string id(id_len, '\0');
    is.read(id.data(), id_len);
    if (!is) throw std::runtime_error("artifact container truncated");
    items.emplace_back(std::move(id), read_artifact_record(is));
  }
  return items;
}

}  // namespace gmsa
