#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gmsa/compressor.hpp"
#include "gmsa/decoder.hpp"
#include "gmsa/model.hpp"
#include "gmsa/rng.hpp"

namespace gmsa {

struct TrainConfig {
  Stage stage = Stage::pretrain;
  double learning_rate = 1e-4;
  int batch_size = 4;
  int total_steps = 1000;
  double clip_norm = 2.0;
  uint64_t seed = 17;
  std::vector<int> allowed_rates{4, 8};
  // AdamW details (fixed defaults; only the values above come from configs)
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// uniform draw from a non-empty rate set
int sample_rate(Rng& rng, const std::vector<int>& allowed_rates);

// linear decay to zero: exactly 1 - step / total_steps, floored at 0
double lr_schedule_factor(int64_t step, int64_t total_steps);

// Decoupled-weight-decay Adam over the currently trainable parameters,
// with a global-norm gradient clip before every update.
class AdamW {
 public:
  AdamW(ParameterStore& params, const TrainConfig& cfg);

  // one update at the given learning rate; returns the pre-clip global norm.
  // NaN gradients abort with the offending parameter named.
  double step(double lr);

  int64_t updates_done() const { return t_; }
  double last_grad_norm() const { return last_norm_; }

  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  void restore(int64_t t, const std::map<std::string, std::pair<std::vector<double>,
                                                                std::vector<double>>>& state);

 private:
  std::vector<Slot> slots_;
  double clip_norm_, weight_decay_, beta1_, beta2_, eps_;
  double last_norm_ = 0.0;
  int64_t t_ = 0;
};

struct TokenizedSample {
  std::vector<int> context;
  std::vector<int> question;  // empty for AE-only rows
  std::vector<int> answer;
};

std::vector<TokenizedSample> tokenize_samples(const std::vector<struct SampleRecord>& records);

struct Batch {
  int rate = 0;  // 0 for pretrain
  std::vector<int> sample_idx;
};

// Deterministic epoch plan: seeded shuffle, one rate draw per sample, samples
// grouped by rate into rectangular batches, batch order reshuffled. A pure
// function of (n, cfg, epoch) so training can resume by replay.
std::vector<Batch> epoch_batches(int n_samples, const TrainConfig& cfg, uint64_t epoch);

struct StepLog {
  int64_t step = 0;
  Stage stage = Stage::none;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::map<int, int> rate_histogram;

  std::string to_json() const;
};

// Owns the optimizer and the batch schedule for one training stage. The
// caller applies the stage mask up front via the constructor.
class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg, std::vector<TokenizedSample> data,
          int64_t start_step = 0);

  StepLog step();
  int64_t steps_done() const { return step_; }
  double current_lr() const;

  AdamW& optimizer() { return opt_; }
  Rng& rng() { return rng_; }

 private:
  Batch next_batch();
  Tensor sample_loss(const TokenizedSample& sample, int rate);

  Model& model_;
  TrainConfig cfg_;
  std::vector<TokenizedSample> data_;
  AdamW opt_;
  Rng rng_;
  int64_t step_ = 0;
  uint64_t epoch_ = 0;
  std::vector<Batch> queue_;
  size_t queue_pos_ = 0;
};

// Spec-level step entry points (the Trainer uses these internally); each
// validates that the model carries the matching stage mask.
double pretrain_lm_step(Model& model, const std::vector<TokenizedSample>& batch, AdamW& opt,
                        double lr);
double ae_train_step(Model& model, const std::vector<TokenizedSample>& batch, int rate,
                     AdamW& opt, double lr);
double keft_train_step(Model& model, const std::vector<TokenizedSample>& batch, int rate,
                       AdamW& opt, double lr);

}  // namespace gmsa
