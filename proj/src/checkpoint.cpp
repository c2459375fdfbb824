#include "gmsa/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace gmsa {

namespace {

constexpr char kMagic[8] = {'G', 'M', 'S', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void append_le64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_le32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_le64(const std::string& s, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

uint32_t read_le32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

std::string real_str(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void append_doubles(std::string& out, const std::vector<double>& values) {
  for (double v : values) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    append_le64(out, bits);
  }
}

void read_doubles(const std::string& s, size_t& off, std::vector<double>& values) {
  for (auto& v : values) {
    const uint64_t bits = read_le64(s, off);
    off += 8;
    std::memcpy(&v, &bits, sizeof(v));
  }
}

std::string shape_line(const Tensor& t) {
  std::string line;
  for (int d : t.shape()) line += " " + std::to_string(d);
  return line;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainerState* trainer_state) {
  const ModelConfig& c = model.cfg;
  std::ostringstream header;
  header << "variant = " << to_string(model.variant) << "\n";
  header << "trained_through = " << to_string(model.trained_through) << "\n";
  header << "vocab = " << c.vocab << "\n";
  header << "hidden = " << c.hidden << "\n";
  header << "head_dim = " << c.head_dim << "\n";
  header << "n_query_heads = " << c.n_q_heads << "\n";
  header << "n_kv_heads = " << c.n_kv_heads << "\n";
  header << "intermediate = " << c.intermediate << "\n";
  header << "n_decoder_layers = " << c.n_dec << "\n";
  header << "n_encoder_layers = " << c.n_enc << "\n";
  header << "n_lsa_layers = " << c.k_lsa << "\n";
  header << "rope_base = " << real_str(c.rope_base) << "\n";
  header << "norm_eps = " << real_str(c.norm_eps) << "\n";
  header << "lora_rank = " << c.lora_rank << "\n";
  header << "lora_alpha = " << real_str(c.lora_alpha) << "\n";
  header << "tcp_max_tokens = " << c.tcp_max_tokens << "\n";
  header << "seed = " << c.seed << "\n";
  header << "init_std = " << real_str(c.init_std) << "\n";
  header << "allowed_rates =";
  for (int r : c.allowed_rates) header << " " << r;
  header << "\n";

  std::string payload;
  for (const auto& item : model.params.items()) {
    header << "tensor " << item.name << " " << (item.tensor.requires_grad() ? 1 : 0)
           << shape_line(item.tensor) << "\n";
    append_doubles(payload, item.tensor.data());
  }
  if (trainer_state) {
    header << "trainer_step = " << trainer_state->step << "\n";
    header << "adam_t = " << trainer_state->adam_t << "\n";
    header << "rng =";
    for (uint64_t w : trainer_state->rng_state) header << " " << w;
    header << "\n";
    for (const auto& [name, mv] : trainer_state->adam_mv) {
      header << "opt " << name << " " << mv.first.size() << "\n";
      append_doubles(payload, mv.first);
      append_doubles(payload, mv.second);
    }
  }

  const std::string header_text = header.str();
  std::string blob(kMagic, sizeof(kMagic));
  append_le32(blob, kVersion);
  append_le64(blob, header_text.size());
  append_le64(blob, payload.size());
  blob += header_text;
  blob += payload;
  append_le64(blob, fnv1a(blob));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Model load_checkpoint(const std::string& path, std::optional<TrainerState>* trainer_state) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string blob = buf.str();

  if (blob.size() < sizeof(kMagic) + 4 + 16 + 8 ||
      std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("'" + path + "' is not a checkpoint file");
  }
  const uint32_t version = read_le32(blob, 8);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint '" + path + "' has format version " +
                             std::to_string(version) + ", this build reads version " +
                             std::to_string(kVersion));
  }
  const uint64_t header_len = read_le64(blob, 12);
  const uint64_t payload_len = read_le64(blob, 20);
  const size_t expected = 28 + header_len + payload_len + 8;
  if (blob.size() != expected) {
    throw std::runtime_error("checkpoint '" + path + "' is truncated or padded: " +
                             std::to_string(blob.size()) + " bytes, expected " +
                             std::to_string(expected));
  }
  const uint64_t stored_sum = read_le64(blob, blob.size() - 8);
  if (fnv1a(blob.substr(0, blob.size() - 8)) != stored_sum) {
    throw std::runtime_error("checkpoint '" + path + "' failed its checksum");
  }

  const std::string header_text = blob.substr(28, header_len);
  std::map<std::string, std::string> kv;
  struct TensorLine {
    std::string name;
    bool trainable;
    Shape shape;
  };
  std::vector<TensorLine> tensors;
  std::vector<std::pair<std::string, size_t>> opt_lines;
  {
    std::istringstream hs(header_text);
    std::string line;
    while (std::getline(hs, line)) {
      if (line.rfind("tensor ", 0) == 0) {
        std::istringstream ls(line.substr(7));
        TensorLine t;
        int trainable = 0, d = 0;
        ls >> t.name >> trainable;
        while (ls >> d) t.shape.push_back(d);
        t.trainable = trainable != 0;
        tensors.push_back(std::move(t));
      } else if (line.rfind("opt ", 0) == 0) {
        std::istringstream ls(line.substr(4));
        std::string name;
        size_t count = 0;
        ls >> name >> count;
        opt_lines.emplace_back(name, count);
      } else {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
      }
    }
  }

  ModelConfig cfg;
  cfg.vocab = std::stoi(kv.at("vocab"));
  cfg.hidden = std::stoi(kv.at("hidden"));
  cfg.head_dim = std::stoi(kv.at("head_dim"));
  cfg.n_q_heads = std::stoi(kv.at("n_query_heads"));
  cfg.n_kv_heads = std::stoi(kv.at("n_kv_heads"));
  cfg.intermediate = std::stoi(kv.at("intermediate"));
  cfg.n_dec = std::stoi(kv.at("n_decoder_layers"));
  cfg.n_enc = std::stoi(kv.at("n_encoder_layers"));
  cfg.k_lsa = std::stoi(kv.at("n_lsa_layers"));
  cfg.rope_base = std::stod(kv.at("rope_base"));
  cfg.norm_eps = std::stod(kv.at("norm_eps"));
  cfg.lora_rank = std::stoi(kv.at("lora_rank"));
  cfg.lora_alpha = std::stod(kv.at("lora_alpha"));
  cfg.tcp_max_tokens = std::stoi(kv.at("tcp_max_tokens"));
  cfg.seed = std::stoull(kv.at("seed"));
  cfg.init_std = std::stod(kv.at("init_std"));
  cfg.allowed_rates.clear();
  {
    std::istringstream rs(kv.at("allowed_rates"));
    int r;
    while (rs >> r) cfg.allowed_rates.push_back(r);
  }

  Model model = Model::create(cfg);
  const Variant variant = variant_from_string(kv.at("variant"));
  if (variant != Variant::decoder_only) model.attach_compressor(variant);
  model.trained_through = stage_from_string(kv.at("trained_through"));

  size_t off = 28 + header_len;
  for (const auto& t : tensors) {
    if (!model.params.contains(t.name)) {
      throw std::runtime_error("checkpoint '" + path + "' carries unknown tensor '" + t.name + "'");
    }
    Tensor& dst = model.params.get(t.name);
    if (dst.shape() != t.shape) {
      throw std::runtime_error("checkpoint '" + path + "': tensor '" + t.name +
                               "' shape mismatch");
    }
    read_doubles(blob, off, dst.data());
    dst.set_requires_grad(t.trainable);
  }

  if (trainer_state) {
    trainer_state->reset();
    if (kv.count("trainer_step")) {
      TrainerState st;
      st.step = std::stoll(kv.at("trainer_step"));
      st.adam_t = std::stoll(kv.at("adam_t"));
      std::istringstream rs(kv.at("rng"));
      uint64_t w;
      while (rs >> w) st.rng_state.push_back(w);
      for (const auto& [name, count] : opt_lines) {
        std::vector<double> m(count), v(count);
        read_doubles(blob, off, m);
        read_doubles(blob, off, v);
        st.adam_mv[name] = {std::move(m), std::move(v)};
      }
      *trainer_state = std::move(st);
    }
  }
  return model;
}

}  // namespace gmsa
