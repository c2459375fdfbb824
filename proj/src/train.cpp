#include "gmsa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gmsa/data.hpp"
#include "gmsa/tokenizer.hpp"

namespace gmsa {

void TrainConfig::validate() const {
  if (clip_norm <= 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
  if (total_steps < 1) throw std::invalid_argument("TrainConfig: total_steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (allowed_rates.empty()) throw std::invalid_argument("TrainConfig: allowed_rates is empty");
}

int sample_rate(Rng& rng, const std::vector<int>& allowed_rates) {
  if (allowed_rates.empty()) {
    throw std::invalid_argument("sample_rate: the rate set is empty");
  }
  return allowed_rates[rng.next_index(allowed_rates.size())];
}

double lr_schedule_factor(int64_t step, int64_t total_steps) {
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return frac > 0.0 ? frac : 0.0;
}

// ---------------------------------- AdamW -----------------------------------

AdamW::AdamW(ParameterStore& params, const TrainConfig& cfg)
    : clip_norm_(cfg.clip_norm),
      weight_decay_(cfg.weight_decay),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps) {
  for (auto& item : params.items()) {
    if (item.tensor.requires_grad()) {
      slots_.push_back({item.name, item.tensor, std::vector<double>(item.tensor.numel(), 0.0),
                        std::vector<double>(item.tensor.numel(), 0.0)});
    }
  }
}

double AdamW::step(double lr) {
  double norm_sq = 0.0;
  for (auto& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    const auto& g = slot.param.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (std::isnan(g[i])) {
        throw std::runtime_error("AdamW: NaN gradient in parameter '" + slot.name +
                                 "' at element " + std::to_string(i));
      }
      norm_sq += g[i] * g[i];
    }
  }
  const double norm = std::sqrt(norm_sq);
  last_norm_ = norm;
  const double clip_scale = norm > clip_norm_ ? clip_norm_ / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    auto& p = slot.param.data();
    const bool has_grad = slot.param.has_grad();
    for (size_t i = 0; i < p.size(); ++i) {
      const double g = (has_grad ? slot.param.grad()[i] : 0.0) * clip_scale;
      if (weight_decay_ != 0.0) p[i] -= lr * weight_decay_ * p[i];
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
  return norm;
}

void AdamW::restore(int64_t t, const std::map<std::string, std::pair<std::vector<double>,
                                                                     std::vector<double>>>& state) {
  t_ = t;
  for (auto& slot : slots_) {
    auto it = state.find(slot.name);
    if (it == state.end()) {
      throw std::runtime_error("AdamW::restore: no saved state for '" + slot.name + "'");
    }
    if (it->second.first.size() != slot.m.size()) {
      throw std::runtime_error("AdamW::restore: state size mismatch for '" + slot.name + "'");
    }
    slot.m = it->second.first;
    slot.v = it->second.second;
  }
}

// -------------------------------- scheduling --------------------------------

std::vector<TokenizedSample> tokenize_samples(const std::vector<SampleRecord>& records) {
  std::vector<TokenizedSample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    TokenizedSample s;
    s.context = tokenize(rec.context);
    if (rec.question) s.question = tokenize(*rec.question);
    if (!rec.answers.empty()) s.answer = tokenize(rec.answers.front());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Batch> epoch_batches(int n_samples, const TrainConfig& cfg, uint64_t epoch) {
  Rng rng(Rng::mix(cfg.seed, epoch));
  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<Batch> batches;
  if (cfg.stage == Stage::pretrain) {
    for (int i = 0; i < n_samples; i += cfg.batch_size) {
      Batch b;
      for (int j = i; j < std::min(n_samples, i + cfg.batch_size); ++j) {
        b.sample_idx.push_back(order[j]);
      }
      batches.push_back(std::move(b));
    }
  } else {
    // one rate draw per sample per epoch, then rate-grouped rectangular batches
    std::map<int, std::vector<int>> buckets;
    for (int idx : order) buckets[sample_rate(rng, cfg.allowed_rates)].push_back(idx);
    for (auto& [rate, members] : buckets) {
      for (size_t i = 0; i < members.size(); i += cfg.batch_size) {
        Batch b;
        b.rate = rate;
        for (size_t j = i; j < std::min(members.size(), i + cfg.batch_size); ++j) {
          b.sample_idx.push_back(members[j]);
        }
        batches.push_back(std::move(b));
      }
    }
    rng.shuffle(batches);
  }
  return batches;
}

std::string StepLog::to_json() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"step\":" << step << ",\"stage\":\"" << to_string(stage) << "\",\"loss\":" << loss
     << ",\"lr\":" << lr << ",\"grad_norm\":" << grad_norm << ",\"rate_histogram\":{";
  bool first = true;
  for (const auto& [rate, count] : rate_histogram) {
    if (!first) os << ",";
    os << "\"" << rate << "\":" << count;
    first = false;
  }
  os << "}}";
  return os.str();
}

// ------------------------------- step functions -----------------------------

namespace {

void require_stage(const Model& model, Stage expected, const char* who) {
  if (model.mask_stage != expected) {
    throw std::logic_error(std::string(who) + ": model carries the '" +
                           to_string(model.mask_stage) + "' mask, expected '" +
                           to_string(expected) + "'");
  }
}

// mean over samples of the per-sample mean token loss; one backward pass
double run_batch(Model& model, const std::vector<Tensor>& losses, AdamW& opt, double lr) {
  Tensor total = losses.front();
  for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  Tensor loss = scale(total, 1.0 / static_cast<double>(losses.size()));
  const double value = loss.scalar();
  backward(loss);
  opt.step(lr);
  model.params.zero_grads();
  return value;
}

std::vector<int> with_eos(const std::vector<int>& ids) {
  std::vector<int> t = ids;
  t.push_back(tok::kEos);
  return t;
}

}  // namespace

double pretrain_lm_step(Model& model, const std::vector<TokenizedSample>& batch, AdamW& opt,
                        double lr) {
  require_stage(model, Stage::pretrain, "pretrain_lm_step");
  tape().clear();
  std::vector<Tensor> losses;
  for (const auto& s : batch) {
    DecoderInput in = DecoderInput::lm({tok::kBos}, with_eos(s.context));
    losses.push_back(cross_entropy_mean(forward_with_soft_prefix(in, model), in.targets));
  }
  return run_batch(model, losses, opt, lr);
}

double ae_train_step(Model& model, const std::vector<TokenizedSample>& batch, int rate,
                     AdamW& opt, double lr) {
  require_stage(model, Stage::ae, "ae_train_step");
  tape().clear();
  std::vector<Tensor> losses;
  for (const auto& s : batch) {
    CompressionArtifact art = compress_with(model, s.context, rate);
    DecoderInput in = DecoderInput::ae(art.soft_tokens, with_eos(s.context));
    losses.push_back(cross_entropy_mean(forward_with_soft_prefix(in, model), in.targets));
  }
  return run_batch(model, losses, opt, lr);
}

double keft_train_step(Model& model, const std::vector<TokenizedSample>& batch, int rate,
                       AdamW& opt, double lr) {
  require_stage(model, Stage::keft, "keft_train_step");
  tape().clear();
  std::vector<Tensor> losses;
  for (const auto& s : batch) {
    if (s.question.empty() || s.answer.empty()) {
      throw std::runtime_error("keft_train_step: batch sample lacks a question or answer");
    }
    Tensor soft;
    {
      // encoder and alignment stack are frozen; no gradient flows upstream
      NoGradGuard ng;
      soft = compress_with(model, s.context, rate).soft_tokens;
    }
    DecoderInput in = DecoderInput::ke(soft, s.question, with_eos(s.answer));
    losses.push_back(cross_entropy_mean(forward_with_soft_prefix(in, model), in.targets));
  }
  return run_batch(model, losses, opt, lr);
}

// --------------------------------- Trainer ----------------------------------

namespace {

AdamW make_stage_optimizer(Model& model, const TrainConfig& cfg) {
  cfg.validate();
  apply_stage_mask(model, cfg.stage);
  return AdamW(model.params, cfg);
}

}  // namespace

Trainer::Trainer(Model& model, const TrainConfig& cfg, std::vector<TokenizedSample> data,
                 int64_t start_step)
    : model_(model),
      cfg_(cfg),
      data_(std::move(data)),
      opt_(make_stage_optimizer(model, cfg)),
      rng_(Rng::mix(cfg.seed, 0x7261)) {
  if (data_.empty()) throw std::invalid_argument("Trainer: empty dataset");
  if (cfg_.stage == Stage::keft) {
    for (const auto& s : data_) {
      if (s.question.empty() || s.answer.empty()) {
        throw std::runtime_error("Trainer: keft stage requires question/answer rows");
      }
    }
    if (model_.trained_through != Stage::ae) {
      std::fprintf(stderr,
                   "warning: knowledge-extraction fine-tuning on a compressor without completed "
                   "autoencoder training\n");
    }
  }
  // fast-forward the deterministic schedule to start_step (resume support)
  int64_t remaining = start_step;
  queue_ = epoch_batches(static_cast<int>(data_.size()), cfg_, epoch_);
  while (remaining >= static_cast<int64_t>(queue_.size() - queue_pos_)) {
    remaining -= static_cast<int64_t>(queue_.size() - queue_pos_);
    ++epoch_;
    queue_ = epoch_batches(static_cast<int>(data_.size()), cfg_, epoch_);
    queue_pos_ = 0;
  }
  queue_pos_ += static_cast<size_t>(remaining);
  step_ = start_step;
}

double Trainer::current_lr() const {
  return cfg_.learning_rate * lr_schedule_factor(step_, cfg_.total_steps);
}

Batch Trainer::next_batch() {
  if (queue_pos_ >= queue_.size()) {
    ++epoch_;
    queue_ = epoch_batches(static_cast<int>(data_.size()), cfg_, epoch_);
    queue_pos_ = 0;
  }
  return queue_[queue_pos_++];
}

StepLog Trainer::step() {
  const Batch batch = next_batch();
  std::vector<TokenizedSample> samples;
  samples.reserve(batch.sample_idx.size());
  for (int idx : batch.sample_idx) samples.push_back(data_[idx]);

  StepLog log;
  log.step = step_;
  log.stage = cfg_.stage;
  log.lr = current_lr();
  if (batch.rate > 0) log.rate_histogram[batch.rate] = static_cast<int>(samples.size());

  switch (cfg_.stage) {
    case Stage::pretrain:
      log.loss = pretrain_lm_step(model_, samples, opt_, log.lr);
      break;
    case Stage::ae:
      log.loss = ae_train_step(model_, samples, batch.rate, opt_, log.lr);
      break;
    case Stage::keft:
      log.loss = keft_train_step(model_, samples, batch.rate, opt_, log.lr);
      break;
    default:
      throw std::logic_error("Trainer: unsupported stage");
  }
  log.grad_norm = opt_.last_grad_norm();
  ++step_;
  model_.trained_through = cfg_.stage;
  return log;
}

}  // namespace gmsa
