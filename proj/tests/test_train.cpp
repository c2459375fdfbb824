#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "doctest.h"
#include "gmsa/data.hpp"
#include "gmsa/train.hpp"
#include "test_helpers.hpp"

using namespace gmsa;
using gmsa_tests::make_gmsa_model;
using gmsa_tests::make_tcp_model;
using gmsa_tests::toy_model_config;

namespace {

// the AE stage presumes a competent decoder; give the toy models a short
// memorization pretrain on the same corpus first
void quick_pretrain(Model& model, const std::vector<TokenizedSample>& data, int steps,
                    double lr = 3e-3) {
  TrainConfig cfg;
  cfg.stage = Stage::pretrain;
  cfg.learning_rate = lr;
  cfg.batch_size = 4;
  cfg.total_steps = steps * 2;  // stay on the high half of the decay
  Trainer trainer(model, cfg, data);
  for (int s = 0; s < steps; ++s) trainer.step();
}

std::vector<TokenizedSample> restoration_data(int count, int length, uint64_t seed) {
  CorpusParams p;
  p.kind = CorpusKind::restoration;
  p.count = count;
  p.length = length;
  p.seed = seed;
  return tokenize_samples(generate_synthetic_dataset(p));
}

std::vector<TokenizedSample> kv_data(int count, uint64_t seed, int pairs = 4) {
  CorpusParams p;
  p.kind = CorpusKind::kv_qa;
  p.count = count;
  p.kv_pairs = pairs;
  p.seed = seed;
  return tokenize_samples(generate_synthetic_dataset(p));
}

// raw bytes of every parameter whose name matches the predicate
template <class Pred>
std::vector<std::pair<std::string, std::vector<double>>> snapshot(const Model& m, Pred keep) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& item : m.params.items()) {
    if (keep(item.name)) out.emplace_back(item.name, item.tensor.data());
  }
  return out;
}

template <class Pred>
bool bitwise_equal(const Model& m,
                   const std::vector<std::pair<std::string, std::vector<double>>>& snap,
                   Pred keep) {
  size_t idx = 0;
  for (const auto& item : m.params.items()) {
    if (!keep(item.name)) continue;
    const auto& saved = snap[idx++].second;
    if (saved.size() != item.tensor.data().size()) return false;
    if (std::memcmp(saved.data(), item.tensor.data().data(), saved.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("sample_rate") {
  SUBCASE("singleton set always returns its element") {
    Rng rng(1);
    for (int i = 0; i < 32; ++i) CHECK(sample_rate(rng, {4}) == 4);
  }
  SUBCASE("empty set is a config error") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_rate(rng, {}), std::invalid_argument);
  }
  SUBCASE("two rates are drawn near-uniformly") {
    Rng rng(123);
    int fours = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      if (sample_rate(rng, {4, 8}) == 4) ++fours;
    }
    const double freq = static_cast<double>(fours) / draws;
    CHECK(freq >= 0.47);
    CHECK(freq <= 0.53);
  }
  SUBCASE("identical seeds give identical sequences") {
    Rng a(7), b(7);
    for (int i = 0; i < 64; ++i) CHECK(sample_rate(a, {4, 8}) == sample_rate(b, {4, 8}));
  }
}

TEST_CASE("adamw update mechanics") {
  TrainConfig cfg;
  cfg.stage = Stage::pretrain;
  cfg.clip_norm = 2.0;

  SUBCASE("zero gradients with zero decay leave parameters bitwise unchanged") {
    ParameterStore store;
    Tensor w = Tensor::from_data({3}, {1.0, -2.0, 0.5});
    w.set_requires_grad(true);
    store.add("w", w);
    TrainConfig c = cfg;
    c.weight_decay = 0.0;
    AdamW opt(store, c);
    const auto before = w.data();
    opt.step(0.1);
    CHECK(std::memcmp(before.data(), w.data().data(), 3 * sizeof(double)) == 0);
  }
  SUBCASE("zero gradients with decay only shrink the weights") {
    ParameterStore store;
    Tensor w = Tensor::from_data({1}, {2.0});
    w.set_requires_grad(true);
    store.add("w", w);
    AdamW opt(store, cfg);  // decay 0.01
    opt.step(0.1);
    CHECK(w.data()[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
  }
  SUBCASE("global norm clipping scales gradients by clip/norm") {
    ParameterStore store;
    Tensor w = Tensor::from_data({1}, {0.0});
    w.set_requires_grad(true);
    store.add("w", w);
    TrainConfig c = cfg;
    c.weight_decay = 0.0;
    AdamW opt(store, c);
    w.grad()[0] = 10.0;  // norm 10, clip 2 -> effective gradient 2 (x0.2)
    opt.step(0.1);
    CHECK(opt.last_grad_norm() == doctest::Approx(10.0));
    CHECK(opt.slots()[0].m[0] == doctest::Approx(0.1 * 2.0).epsilon(1e-12));
    CHECK(opt.slots()[0].v[0] == doctest::Approx(0.001 * 4.0).epsilon(1e-12));
  }
  SUBCASE("three-step quadratic trace matches the hand-computed values") {
    // f = w^2 / 2, grad = w; lr 0.1, betas (0.9, 0.999), eps 1e-8, no decay
    ParameterStore store;
    Tensor w = Tensor::from_data({1}, {1.0});
    w.set_requires_grad(true);
    store.add("w", w);
    TrainConfig c = cfg;
    c.weight_decay = 0.0;
    c.clip_norm = 100.0;
    AdamW opt(store, c);
    const double expected[3] = {0.900000001, 0.8004122297123382, 0.701586274504415};
    for (int s = 0; s < 3; ++s) {
      store.zero_grads();
      tape().clear();
      backward(scale(sum_all(mul(w, w)), 0.5));
      opt.step(0.1);
      CHECK(w.data()[0] == doctest::Approx(expected[s]).epsilon(1e-12));
    }
  }
  SUBCASE("decoupled decay trace") {
    ParameterStore store;
    Tensor w = Tensor::from_data({1}, {1.0});
    w.set_requires_grad(true);
    store.add("w", w);
    TrainConfig c = cfg;
    c.clip_norm = 100.0;  // decay stays at the default 0.01
    AdamW opt(store, c);
    const double expected[3] = {0.899000001, 0.7985190281887788, 0.6989111847156934};
    for (int s = 0; s < 3; ++s) {
      store.zero_grads();
      tape().clear();
      // gradient of f at the pre-step weight, as an explicit leaf
      w.grad().assign(1, 0.0);
      w.grad()[0] = s == 0 ? 1.0 : w.data()[0];
      opt.step(0.1);
      CHECK(w.data()[0] == doctest::Approx(expected[s]).epsilon(1e-11));
    }
  }
  SUBCASE("nan gradient aborts naming the parameter") {
    ParameterStore store;
    Tensor w = Tensor::from_data({2}, {1.0, 1.0});
    w.set_requires_grad(true);
    store.add("offender", w);
    AdamW opt(store, cfg);
    w.grad()[1] = std::nan("");
    CHECK_THROWS_WITH_AS(opt.step(0.1), doctest::Contains("offender"), std::runtime_error);
  }
}

TEST_CASE("epoch_batches") {
  TrainConfig cfg;
  cfg.stage = Stage::ae;
  cfg.batch_size = 4;
  cfg.seed = 5;
  cfg.allowed_rates = {4, 8};

  SUBCASE("every sample appears exactly once per epoch") {
    auto batches = epoch_batches(19, cfg, 3);
    std::vector<int> seen(19, 0);
    for (const auto& b : batches) {
      CHECK(b.rate > 0);
      for (int idx : b.sample_idx) seen[idx] += 1;
    }
    for (int c : seen) CHECK(c == 1);
  }
  SUBCASE("batches are rate-homogeneous and bounded by batch_size") {
    auto batches = epoch_batches(33, cfg, 0);
    for (const auto& b : batches) {
      CHECK((b.rate == 4 || b.rate == 8));
      CHECK(b.sample_idx.size() <= 4);
      CHECK(!b.sample_idx.empty());
    }
  }
  SUBCASE("pure function of (n, config, epoch)") {
    auto a = epoch_batches(16, cfg, 7);
    auto b = epoch_batches(16, cfg, 7);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].rate == b[i].rate);
      CHECK(a[i].sample_idx == b[i].sample_idx);
    }
    auto c = epoch_batches(16, cfg, 8);
    bool differs = c.size() != a.size();
    for (size_t i = 0; !differs && i < a.size(); ++i) {
      differs = a[i].sample_idx != c[i].sample_idx || a[i].rate != c[i].rate;
    }
    CHECK(differs);
  }
}

TEST_CASE("pretrain step") {
  ModelConfig mc = toy_model_config();
  mc.init_std = 0.02;
  Model model = Model::create(mc);
  auto data = restoration_data(8, 16, 11);

  SUBCASE("initial loss is close to ln V") {
    TrainConfig cfg;
    cfg.stage = Stage::pretrain;
    cfg.learning_rate = 1e-3;
    cfg.total_steps = 10;
    Trainer trainer(model, cfg, data);
    const double loss = trainer.step().loss;
    CHECK(loss > std::log(260.0) * 0.95);
    CHECK(loss < std::log(260.0) * 1.05);
  }
  SUBCASE("wrong-stage mask is a usage error") {
    apply_stage_mask(model, Stage::keft);
    AdamW opt(model.params, TrainConfig{});
    CHECK_THROWS_AS(pretrain_lm_step(model, data, opt, 1e-3), std::logic_error);
  }
}

TEST_CASE("lr schedule is exactly linear") {
  // the decay factor itself is exact; the learning rate is its plain product
  for (int64_t total : {8, 100, 1000}) {
    for (int64_t s = 0; s <= total; ++s) {
      CHECK(lr_schedule_factor(s, total) == 1.0 - static_cast<double>(s) / total);
    }
  }
  CHECK(lr_schedule_factor(10, 8) == 0.0);

  Model model = Model::create(toy_model_config());
  TrainConfig cfg;
  cfg.stage = Stage::pretrain;
  cfg.learning_rate = 3e-3;
  cfg.total_steps = 8;
  Trainer trainer(model, cfg, restoration_data(4, 8, 2));
  for (int s = 0; s < 8; ++s) {
    CHECK(trainer.current_lr() == cfg.learning_rate * lr_schedule_factor(s, 8));
    trainer.step();
  }
  CHECK(trainer.current_lr() == 0.0);
}

TEST_CASE("ae training freezes the decoder and encoder base") {
  Model model = make_gmsa_model(31);
  auto data = restoration_data(6, 20, 31);
  TrainConfig cfg;
  cfg.stage = Stage::ae;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 2;
  cfg.total_steps = 50;
  cfg.allowed_rates = {4, 8};
  Trainer trainer(model, cfg, data);

  auto is_frozen_set = [](const std::string& name) {
    if (name.rfind("decoder.", 0) == 0) return true;
    if (name.rfind("encoder.", 0) == 0 && name.find("lora") == std::string::npos) return true;
    return false;
  };
  auto is_trainable_set = [](const std::string& name) {
    return name.find("lora") != std::string::npos || name.rfind("lsa.", 0) == 0;
  };

  const auto frozen_before = snapshot(model, is_frozen_set);
  const auto lsa_before = snapshot(model, is_trainable_set);
  double first_loss = 0.0, last_loss = 0.0;
  for (int s = 0; s < 6; ++s) {
    const auto log = trainer.step();
    if (s == 0) first_loss = log.loss;
    last_loss = log.loss;
    CHECK(!log.rate_histogram.empty());
  }
  (void)first_loss;
  (void)last_loss;
  CHECK(bitwise_equal(model, frozen_before, is_frozen_set));
  CHECK(!bitwise_equal(model, lsa_before, is_trainable_set));
  // LSA drifted away from the decoder's first layer
  CHECK(model.lsa_blocks[0].wq.data() != model.dec_blocks[0].wq.data());
}

TEST_CASE("ae overfits a single sample") {
  ModelConfig mc = toy_model_config();
  mc.seed = 41;
  Model model = Model::create(mc);
  auto corpus = restoration_data(8, 24, 41);
  quick_pretrain(model, corpus, 400);
  model.attach_compressor(Variant::gmsa);

  TrainConfig cfg;
  cfg.stage = Stage::ae;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 1;
  cfg.total_steps = 400;
  cfg.allowed_rates = {4};
  Trainer trainer(model, cfg, {corpus[0]});
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 200; ++s) {
    last = trainer.step().loss;
    if (s == 0) first = last;
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("tcp ae step shares the full training contract") {
  ModelConfig mc = toy_model_config();
  mc.seed = 43;
  Model model = Model::create(mc);
  auto data = restoration_data(4, 20, 43);
  quick_pretrain(model, data, 300);
  model.attach_compressor(Variant::tcp);
  TrainConfig cfg;
  cfg.stage = Stage::ae;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 2;
  cfg.total_steps = 300;
  cfg.allowed_rates = {4};
  Trainer trainer(model, cfg, data);

  auto is_decoder = [](const std::string& name) { return name.rfind("decoder.", 0) == 0; };
  const auto dec_before = snapshot(model, is_decoder);
  const auto ct_before = model.tcp_tokens.data();
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 120; ++s) {
    const auto log = trainer.step();
    if (s == 0) first = log.loss;
    last = log.loss;
  }
  CHECK(bitwise_equal(model, dec_before, is_decoder));
  CHECK(model.tcp_tokens.data() != ct_before);
  CHECK(last < 0.75 * first);
}

TEST_CASE("keft training touches only decoder q/k/v") {
  Model model = make_gmsa_model(53);
  auto data = kv_data(8, 53);
  TrainConfig cfg;
  cfg.stage = Stage::keft;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.total_steps = 400;
  cfg.allowed_rates = {4};
  model.trained_through = Stage::ae;  // silence the ordering warning
  Trainer trainer(model, cfg, data);

  auto is_qkv = [](const std::string& name) {
    if (name.rfind("decoder.block", 0) != 0) return false;
    return name.find(".wq") != std::string::npos || name.find(".wk") != std::string::npos ||
           name.find(".wv") != std::string::npos;
  };
  auto is_complement = [&](const std::string& name) { return !is_qkv(name); };

  const auto rest_before = snapshot(model, is_complement);
  const auto wq_before = model.dec_blocks[0].wq.data();
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 100; ++s) {
    const auto log = trainer.step();
    if (s == 0) first = log.loss;
    last = log.loss;
  }
  CHECK(bitwise_equal(model, rest_before, is_complement));
  CHECK(model.dec_blocks[0].wq.data() != wq_before);
  CHECK(last < first);
}

TEST_CASE("keft rejects rows without answers") {
  Model model = make_gmsa_model();
  model.trained_through = Stage::ae;
  auto data = restoration_data(4, 12, 3);  // no questions/answers
  TrainConfig cfg;
  cfg.stage = Stage::keft;
  CHECK_THROWS_AS(Trainer(model, cfg, data), std::runtime_error);
}

TEST_CASE("trainer losses are reproducible across identical runs") {
  auto run = [] {
    Model model = make_gmsa_model(77);
    TrainConfig cfg;
    cfg.stage = Stage::ae;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 2;
    cfg.total_steps = 100;
    Trainer trainer(model, cfg, restoration_data(6, 16, 77));
    std::vector<double> losses;
    for (int s = 0; s < 12; ++s) losses.push_back(trainer.step().loss);
    return losses;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(&a[i], &b[i], sizeof(double)) == 0);
  }
}

TEST_CASE("step log serializes the full record") {
  StepLog log;
  log.step = 3;
  log.stage = Stage::ae;
  log.loss = 1.5;
  log.lr = 1e-4;
  log.grad_norm = 0.25;
  log.rate_histogram[4] = 2;
  log.rate_histogram[8] = 2;
  const std::string json = log.to_json();
  CHECK(json.find("\"step\":3") != std::string::npos);
  CHECK(json.find("\"stage\":\"ae\"") != std::string::npos);
  CHECK(json.find("\"rate_histogram\":{\"4\":2,\"8\":2}") != std::string::npos);
}
