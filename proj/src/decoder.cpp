#include "gmsa/decoder.hpp"

#include <numeric>
#include <stdexcept>

namespace gmsa {

DecoderInput DecoderInput::ae(Tensor soft, std::vector<int> reconstruction_targets) {
  DecoderInput in;
  in.mode = Mode::ae;
  in.soft_prefix = std::move(soft);
  in.prompt_ids = {tok::kAeIns};
  in.targets = std::move(reconstruction_targets);
  return in;
}

DecoderInput DecoderInput::ke(Tensor soft, std::vector<int> question,
                              std::vector<int> answer_targets) {
  DecoderInput in;
  in.mode = Mode::ke;
  in.soft_prefix = std::move(soft);
  in.prompt_ids = std::move(question);
  in.targets = std::move(answer_targets);
  return in;
}

DecoderInput DecoderInput::lm(std::vector<int> prompt, std::vector<int> targets) {
  DecoderInput in;
  in.mode = Mode::ae;
  in.prompt_ids = std::move(prompt);
  in.targets = std::move(targets);
  return in;
}

void DecoderInput::validate(int hidden) const {
  if (soft_prefix.defined() && soft_prefix.shape()[1] != hidden) {
    throw std::invalid_argument("DecoderInput: soft prefix width " +
                                std::to_string(soft_prefix.shape()[1]) +
                                " does not match hidden size " + std::to_string(hidden));
  }
  if (mode == Mode::ke && prompt_ids.empty()) {
    throw std::invalid_argument("DecoderInput: ke mode requires question tokens");
  }
  if (prefix_rows() + static_cast<int>(prompt_ids.size()) == 0) {
    throw std::invalid_argument("DecoderInput: empty prefix");
  }
}

namespace {

// assembles layer-0 hidden states: soft rows bypass the embedding table
Tensor build_hidden(const DecoderInput& input, const Model& model,
                    const std::vector<int>& fed_tokens) {
  Tensor h;
  if (!fed_tokens.empty()) h = embedding_rows(model.embed, fed_tokens);
  if (input.soft_prefix.defined()) {
    h = h.defined() ? concat_rows(input.soft_prefix, h) : input.soft_prefix;
  }
  return h;
}

std::vector<int> fed_token_list(const DecoderInput& input) {
  // all prompt tokens plus every target except the last (which is predicted
  // by the final row and never fed)
  std::vector<int> fed = input.prompt_ids;
  if (input.targets.size() > 1) {
    fed.insert(fed.end(), input.targets.begin(), input.targets.end() - 1);
  }
  return fed;
}

}  // namespace

Tensor forward_with_soft_prefix(const DecoderInput& input, const Model& model) {
  input.validate(model.cfg.hidden);
  if (input.targets.empty()) {
    throw std::invalid_argument("forward_with_soft_prefix: no target positions");
  }
  const std::vector<int> fed = fed_token_list(input);
  Tensor h = build_hidden(input, model, fed);
  std::vector<int> positions(h.rows());
  std::iota(positions.begin(), positions.end(), 0);
  h = run_stack(h, model.dec_blocks, model.cfg.block(), positions, nullptr);

  const int t = static_cast<int>(input.targets.size());
  const int first = h.rows() - t;  // row predicting targets[0]
  Tensor out_rows = slice_rows(h, first, t);
  out_rows = rmsnorm(out_rows, model.dec_norm, model.cfg.norm_eps);
  return matmul(out_rows, model.head);
}

std::pair<double, std::vector<double>> sequence_nll(const DecoderInput& input,
                                                    const Model& model) {
  if (input.targets.empty()) {
    throw std::invalid_argument("sequence_nll: targets must be non-empty");
  }
  NoGradGuard ng;
  Tensor logits = forward_with_soft_prefix(input, model);
  std::vector<double> per_token = row_nll(logits, input.targets);
  double total = 0.0;
  for (double v : per_token) total += v;
  return {total, per_token};
}

std::vector<int> greedy_generate(const DecoderInput& prefix, const Model& model, int max_len,
                                 int eos) {
  prefix.validate(model.cfg.hidden);
  if (!prefix.targets.empty()) {
    throw std::invalid_argument("greedy_generate: prefix must not carry targets");
  }
  if (max_len < 1) throw std::invalid_argument("greedy_generate: max_len must be >= 1");

  NoGradGuard ng;
  KVCache cache(model.dec_blocks.size());

  auto step = [&](const Tensor& h, const std::vector<int>& positions) {
    Tensor out = run_stack(h, model.dec_blocks, model.cfg.block(), positions, &cache);
    Tensor last = slice_rows(out, out.rows() - 1, 1);
    last = rmsnorm(last, model.dec_norm, model.cfg.norm_eps);
    Tensor logits = matmul(last, model.head);
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j) {
      if (logits.at(0, j) > logits.at(0, best)) best = j;  // ties keep the lowest id
    }
    return best;
  };

  Tensor h0 = build_hidden(prefix, model, prefix.prompt_ids);
  std::vector<int> positions(h0.rows());
  std::iota(positions.begin(), positions.end(), 0);
  int next_pos = h0.rows();

  std::vector<int> out;
  int token = step(h0, positions);
  out.push_back(token);
  while (token != eos && static_cast<int>(out.size()) < max_len) {
    Tensor h = embedding_rows(model.embed, {token});
    token = step(h, {next_pos++});
    out.push_back(token);
  }
  return out;
}

}  // namespace gmsa
