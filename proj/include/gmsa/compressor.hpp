#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "gmsa/model.hpp"

namespace gmsa {

enum class ArtifactKind { gmsa, tcp };

// Soft-token matrix plus provenance. Always |soft_tokens| = ceil(source_len /
// rate), for both compressor variants.
struct CompressionArtifact {
  Tensor soft_tokens;  // [N_g x D]
  int rate = 0;
  int source_len = 0;  // N_d
  int group_len = 0;   // == rate
  ArtifactKind kind = ArtifactKind::gmsa;

  int n_groups() const { return soft_tokens.defined() ? soft_tokens.shape()[0] : 0; }
};

// causal forward through embedding + encoder blocks + final norm
Tensor encode(const std::vector<int>& tokens, const Model& model);

// group_mean_rows under its contract name
Tensor group_merge(const Tensor& h, int group_len);

// soft tokens from merged summaries; the LSA stack must have been
// weight-initialized from the decoder (attach_compressor does this)
Tensor lsa_align(const Tensor& h_merged, const Model& model);

// encode -> group_merge -> lsa_align
CompressionArtifact compress(const std::vector<int>& tokens, int rate, const Model& model);

// baseline path: appended learnable tokens read out causally, then the MLP.
// bypass_mlp exists for tests that compare against raw appended hiddens.
CompressionArtifact tcp_compress(const std::vector<int>& tokens, int rate, const Model& model,
                                 bool bypass_mlp = false);

// dispatches on model.variant
CompressionArtifact compress_with(const Model& model, const std::vector<int>& tokens, int rate);

// Binary record: magic ("GMSA" or "TCPA"), version u16, rate u16, N_d u32,
// N_g u32, D u32, then row-major little-endian f32 soft tokens.
void write_artifact_record(std::ostream& os, const CompressionArtifact& artifact);
CompressionArtifact read_artifact_record(std::istream& is);

// Container framing for a batch of records: "GMSC" + u32 count, then per
// entry a u32 id length, the id bytes, and the record itself.
void write_artifact_file(const std::string& path,
                         const std::vector<std::pair<std::string, CompressionArtifact>>& items);
std::vector<std::pair<std::string, CompressionArtifact>> read_artifact_file(
    const std::string& path);

}  // namespace gmsa
