// Command-line surface for the context-compression toolkit: corpus
// generation, the three training stages, compression/restoration/QA
// inference, metric evaluation, and the inference-cost model.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gmsa/checkpoint.hpp"
#include "gmsa/compressor.hpp"
#include "gmsa/config.hpp"
#include "gmsa/data.hpp"
#include "gmsa/decoder.hpp"
#include "gmsa/flops.hpp"
#include "gmsa/metrics.hpp"
#include "gmsa/model.hpp"
#include "gmsa/tokenizer.hpp"
#include "gmsa/train.hpp"

namespace {

using nlohmann::json;

gmsa::TrainerState trainer_state_of(gmsa::Trainer& trainer) {
  gmsa::TrainerState st;
  st.step = trainer.steps_done();
  st.adam_t = trainer.optimizer().updates_done();
  st.rng_state = trainer.rng().state();
  for (const auto& slot : trainer.optimizer().slots()) {
    st.adam_mv[slot.name] = {slot.m, slot.v};
  }
  return st;
}

void run_training(gmsa::Model& model, const gmsa::TrainConfig& cfg,
                  const std::vector<gmsa::TokenizedSample>& data, const std::string& log_path,
                  const std::string& out_path, int64_t start_step,
                  const std::optional<gmsa::TrainerState>& resume_state) {
  gmsa::Trainer trainer(model, cfg, data, start_step);
  if (resume_state && start_step > 0) {
    trainer.optimizer().restore(resume_state->adam_t, resume_state->adam_mv);
    trainer.rng().set_state(resume_state->rng_state);
    std::fprintf(stderr, "resuming %s at step %lld\n", gmsa::to_string(cfg.stage).c_str(),
                 static_cast<long long>(start_step));
  }
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open log '" + log_path + "'");
  }
  const int64_t report_every = std::max<int64_t>(1, cfg.total_steps / 20);
  while (trainer.steps_done() < cfg.total_steps) {
    const gmsa::StepLog entry = trainer.step();
    if (log.is_open()) log << entry.to_json() << "\n";
    if (entry.step % report_every == 0 || trainer.steps_done() == cfg.total_steps) {
      std::fprintf(stderr, "[%s] step %lld/%lld loss %.4f lr %.2e\n",
                   gmsa::to_string(cfg.stage).c_str(), static_cast<long long>(entry.step),
                   static_cast<long long>(cfg.total_steps), entry.loss, entry.lr);
    }
  }
  const gmsa::TrainerState st = trainer_state_of(trainer);
  gmsa::save_checkpoint(out_path, model, &st);
  std::fprintf(stderr, "saved %s\n", out_path.c_str());
}

gmsa::TrainConfig make_train_config(const gmsa::ConfigFile& file, gmsa::Stage stage,
                                    const gmsa::ModelConfig& mc) {
  const gmsa::TrainSettings ts = gmsa::train_settings_from(file, stage);
  gmsa::TrainConfig cfg;
  cfg.stage = stage;
  cfg.learning_rate = ts.learning_rate;
  cfg.batch_size = ts.batch_size;
  cfg.total_steps = ts.total_steps;
  cfg.clip_norm = ts.clip_norm;
  cfg.seed = ts.seed;
  cfg.weight_decay = ts.weight_decay;
  cfg.allowed_rates = mc.allowed_rates;
  return cfg;
}

// predictions pair with references by id when possible, by line order otherwise
std::vector<std::pair<gmsa::SampleRecord, gmsa::SampleRecord>> pair_records(
    const std::vector<gmsa::SampleRecord>& pred, const std::vector<gmsa::SampleRecord>& ref) {
  std::map<std::string, const gmsa::SampleRecord*> by_id;
  for (const auto& r : ref) by_id[r.id] = &r;
  bool all_found = !pred.empty();
  for (const auto& p : pred) {
    if (!by_id.count(p.id)) {
      all_found = false;
      break;
    }
  }
  std::vector<std::pair<gmsa::SampleRecord, gmsa::SampleRecord>> pairs;
  if (all_found) {
    for (const auto& p : pred) pairs.emplace_back(p, *by_id.at(p.id));
  } else {
    if (pred.size() != ref.size()) {
      throw std::runtime_error("evaluate: ids do not align and record counts differ (" +
                               std::to_string(pred.size()) + " vs " + std::to_string(ref.size()) +
                               ")");
    }
    for (size_t i = 0; i < pred.size(); ++i) pairs.emplace_back(pred[i], ref[i]);
  }
  return pairs;
}

std::string prediction_text(const gmsa::SampleRecord& rec) {
  if (rec.extra.contains("prediction")) return rec.extra["prediction"].get<std::string>();
  return rec.context;
}

std::string reference_text(const gmsa::SampleRecord& rec) {
  if (rec.extra.contains("reference")) return rec.extra["reference"].get<std::string>();
  return rec.context;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"group-merged summary-vector context compression toolkit"};
  app.require_subcommand(1);

  // ---- gen-corpus ----
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic dataset");
  std::string gen_kind = "restoration", gen_out;
  int gen_count = 64, gen_len = 64, gen_pairs = 8;
  uint64_t gen_seed = 17;
  gen->add_option("--kind", gen_kind, "restoration | kv-qa")->required();
  gen->add_option("--count", gen_count)->required();
  gen->add_option("--len", gen_len, "restoration token length");
  gen->add_option("--pairs", gen_pairs, "kv-qa pairs per context");
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--out", gen_out)->required();

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "train the decoder language model");
  std::string pre_config, pre_out, pre_data, pre_log;
  pre->add_option("--config", pre_config)->required();
  pre->add_option("--data", pre_data, "training JSONL")->required();
  pre->add_option("--out", pre_out)->required();
  pre->add_option("--log", pre_log);

  // ---- train-ae ----
  auto* ae = app.add_subcommand("train-ae", "autoencoder-train a compressor");
  std::string ae_config, ae_init, ae_variant = "gmsa", ae_out, ae_log, ae_data;
  ae->add_option("--config", ae_config)->required();
  ae->add_option("--init", ae_init, "initial checkpoint")->required();
  ae->add_option("--variant", ae_variant, "gmsa | tcp");
  ae->add_option("--out", ae_out)->required();
  ae->add_option("--log", ae_log);
  ae->add_option("--data", ae_data, "training JSONL")->required();

  // ---- train-keft ----
  auto* ke = app.add_subcommand("train-keft", "knowledge-extraction fine-tuning");
  std::string ke_config, ke_init, ke_out, ke_log, ke_data;
  ke->add_option("--config", ke_config)->required();
  ke->add_option("--init", ke_init)->required();
  ke->add_option("--out", ke_out)->required();
  ke->add_option("--log", ke_log);
  ke->add_option("--data", ke_data, "training JSONL with question/answers")->required();

  // ---- compress ----
  auto* cmp = app.add_subcommand("compress", "compress contexts into soft-token artifacts");
  std::string cmp_ckpt, cmp_in, cmp_out;
  int cmp_rate = 4;
  cmp->add_option("--ckpt", cmp_ckpt)->required();
  cmp->add_option("--rate", cmp_rate)->required();
  cmp->add_option("--in", cmp_in, "dataset JSONL")->required();
  cmp->add_option("--out", cmp_out, "artifact container")->required();

  // ---- restore ----
  auto* rst = app.add_subcommand("restore", "reconstruct contexts from artifacts");
  std::string rst_ckpt, rst_artifacts, rst_out;
  int rst_max_len = 512;
  rst->add_option("--ckpt", rst_ckpt)->required();
  rst->add_option("--artifacts", rst_artifacts)->required();
  rst->add_option("--max-len", rst_max_len);
  rst->add_option("--out", rst_out)->required();

  // ---- answer ----
  auto* ans = app.add_subcommand("answer", "answer questions from compressed contexts");
  std::string ans_ckpt, ans_in, ans_out;
  int ans_rate = 4, ans_max_len = 64;
  ans->add_option("--ckpt", ans_ckpt)->required();
  ans->add_option("--rate", ans_rate)->required();
  ans->add_option("--in", ans_in, "dataset JSONL with questions")->required();
  ans->add_option("--out", ans_out)->required();
  ans->add_option("--max-len", ans_max_len);

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "score predictions against references");
  std::string ev_task, ev_pred, ev_ref, ev_out;
  ev->add_option("--task", ev_task, "restoration | qa")->required();
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--ref", ev_ref)->required();
  ev->add_option("--out", ev_out)->required();

  // ---- flops ----
  auto* fl = app.add_subcommand("flops", "analytic inference cost model");
  std::string fl_config, fl_sweep, fl_csv;
  fl->add_option("--config", fl_config)->required();
  fl->add_option("--sweep", fl_sweep, "comma-separated context lengths");
  fl->add_option("--csv", fl_csv, "write the sweep as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      gmsa::CorpusParams p;
      if (gen_kind == "restoration") {
        p.kind = gmsa::CorpusKind::restoration;
      } else if (gen_kind == "kv-qa") {
        p.kind = gmsa::CorpusKind::kv_qa;
      } else {
        throw std::runtime_error("gen-corpus: unknown kind '" + gen_kind + "'");
      }
      p.count = gen_count;
      p.length = gen_len;
      p.kv_pairs = gen_pairs;
      p.seed = gen_seed;
      gmsa::write_dataset(gen_out, gmsa::generate_synthetic_dataset(p));
      std::fprintf(stderr, "wrote %d records to %s\n", gen_count, gen_out.c_str());
    }

    if (*pre) {
      auto file = gmsa::ConfigFile::parse_file(pre_config);
      gmsa::ModelConfig mc = gmsa::model_config_from(file);
      gmsa::Model model = gmsa::Model::create(mc);
      auto data = gmsa::tokenize_samples(gmsa::read_dataset(pre_data));
      run_training(model, make_train_config(file, gmsa::Stage::pretrain, mc), data, pre_log,
                   pre_out, 0, std::nullopt);
    }

    if (*ae) {
      auto file = gmsa::ConfigFile::parse_file(ae_config);
      std::optional<gmsa::TrainerState> st;
      gmsa::Model model = gmsa::load_checkpoint(ae_init, &st);
      const gmsa::Variant variant = gmsa::variant_from_string(ae_variant);
      if (model.variant == gmsa::Variant::decoder_only) {
        model.attach_compressor(variant);
      } else if (model.variant != variant) {
        throw std::runtime_error("train-ae: checkpoint carries the '" +
                                 gmsa::to_string(model.variant) + "' compressor, requested '" +
                                 ae_variant + "'");
      }
      auto data = gmsa::tokenize_samples(gmsa::read_dataset(ae_data));
      const bool resume = st.has_value() && model.trained_through == gmsa::Stage::ae;
      run_training(model, make_train_config(file, gmsa::Stage::ae, model.cfg), data, ae_log,
                   ae_out, resume ? st->step : 0, resume ? st : std::nullopt);
    }

    if (*ke) {
      auto file = gmsa::ConfigFile::parse_file(ke_config);
      std::optional<gmsa::TrainerState> st;
      gmsa::Model model = gmsa::load_checkpoint(ke_init, &st);
      auto data = gmsa::tokenize_samples(gmsa::read_dataset(ke_data));
      const bool resume = st.has_value() && model.trained_through == gmsa::Stage::keft;
      run_training(model, make_train_config(file, gmsa::Stage::keft, model.cfg), data, ke_log,
                   ke_out, resume ? st->step : 0, resume ? st : std::nullopt);
    }

    if (*cmp) {
      gmsa::Model model = gmsa::load_checkpoint(cmp_ckpt);
      auto records = gmsa::read_dataset(cmp_in);
      std::vector<std::pair<std::string, gmsa::CompressionArtifact>> items;
      gmsa::NoGradGuard ng;
      for (const auto& rec : records) {
        items.emplace_back(rec.id,
                           gmsa::compress_with(model, gmsa::tokenize(rec.context), cmp_rate));
      }
      gmsa::write_artifact_file(cmp_out, items);
      std::fprintf(stderr, "compressed %zu contexts at rate %d\n", items.size(), cmp_rate);
    }

    if (*rst) {
      gmsa::Model model = gmsa::load_checkpoint(rst_ckpt);
      auto items = gmsa::read_artifact_file(rst_artifacts);
      std::ofstream os(rst_out);
      if (!os) throw std::runtime_error("cannot open '" + rst_out + "'");
      for (const auto& [id, art] : items) {
        gmsa::DecoderInput prefix = gmsa::DecoderInput::ae(art.soft_tokens, {});
        auto tokens = gmsa::greedy_generate(prefix, model, rst_max_len);
        json j;
        j["id"] = id;
        j["prediction"] = gmsa::detokenize(tokens);
        os << j.dump() << "\n";
      }
      std::fprintf(stderr, "restored %zu contexts\n", items.size());
    }

    if (*ans) {
      gmsa::Model model = gmsa::load_checkpoint(ans_ckpt);
      auto records = gmsa::read_dataset(ans_in);
      std::ofstream os(ans_out);
      if (!os) throw std::runtime_error("cannot open '" + ans_out + "'");
      for (const auto& rec : records) {
        if (!rec.question) {
          throw std::runtime_error("answer: record '" + rec.id + "' has no question");
        }
        gmsa::CompressionArtifact art;
        {
          gmsa::NoGradGuard ng;
          art = gmsa::compress_with(model, gmsa::tokenize(rec.context), ans_rate);
        }
        gmsa::DecoderInput prefix =
            gmsa::DecoderInput::ke(art.soft_tokens, gmsa::tokenize(*rec.question), {});
        auto tokens = gmsa::greedy_generate(prefix, model, ans_max_len);
        json j;
        j["id"] = rec.id;
        j["prediction"] = gmsa::detokenize(tokens);
        os << j.dump() << "\n";
      }
      std::fprintf(stderr, "answered %zu questions\n", records.size());
    }

    if (*ev) {
      auto pred = gmsa::read_jsonl_loose(ev_pred);
      auto ref = gmsa::read_jsonl_loose(ev_ref);
      auto pairs = pair_records(pred, ref);
      std::ofstream os(ev_out);
      if (!os) throw std::runtime_error("cannot open '" + ev_out + "'");
      if (ev_task == "restoration") {
        double bleu_sum = 0, rouge_sum = 0, pem_sum = 0;
        for (const auto& [p, r] : pairs) {
          const auto pt = gmsa::tokenize(prediction_text(p));
          const auto rt = gmsa::tokenize(reference_text(r));
          const double b = gmsa::metrics::bleu(pt, rt);
          const auto rl = gmsa::metrics::rouge_l(pt, rt);
          const double pem = gmsa::metrics::prefix_exact_match(pt, rt);
          bleu_sum += b;
          rouge_sum += rl.f1;
          pem_sum += pem;
          json j;
          j["id"] = r.id;
          j["bleu"] = b;
          j["rouge_l_f1"] = rl.f1;
          j["rouge_l_recall"] = rl.recall;
          j["rouge_l_precision"] = rl.precision;
          j["prefix_exact_match"] = pem;
          os << j.dump() << "\n";
        }
        const double n = static_cast<double>(pairs.size());
        json agg;
        agg["aggregate"] = true;
        agg["task"] = "restoration";
        agg["n"] = pairs.size();
        agg["bleu"] = bleu_sum / n;
        agg["rouge_l_f1"] = rouge_sum / n;
        agg["prefix_exact_match"] = pem_sum / n;
        agg["bert_score"] = "unavailable";
        os << agg.dump() << "\n";
        std::cout << agg.dump() << "\n";
      } else if (ev_task == "qa") {
        double acc_sum = 0, em_sum = 0, f1_sum = 0;
        for (const auto& [p, r] : pairs) {
          std::vector<std::string> golds = r.answers;
          if (golds.empty() && r.extra.contains("reference")) {
            golds.push_back(r.extra["reference"].get<std::string>());
          }
          const auto s = gmsa::metrics::qa_scores(prediction_text(p), golds);
          acc_sum += s.acc;
          em_sum += s.em;
          f1_sum += s.f1;
          json j;
          j["id"] = r.id;
          j["acc"] = s.acc;
          j["em"] = s.em;
          j["f1"] = s.f1;
          os << j.dump() << "\n";
        }
        const double n = static_cast<double>(pairs.size());
        json agg;
        agg["aggregate"] = true;
        agg["task"] = "qa";
        agg["n"] = pairs.size();
        agg["acc"] = acc_sum / n;
        agg["em"] = em_sum / n;
        agg["f1"] = f1_sum / n;
        agg["bert_score"] = "unavailable";
        os << agg.dump() << "\n";
        std::cout << agg.dump() << "\n";
      } else {
        throw std::runtime_error("evaluate: unknown task '" + ev_task + "'");
      }
    }

    if (*fl) {
      auto file = gmsa::ConfigFile::parse_file(fl_config);
      gmsa::ModelConfig mc = gmsa::model_config_from(file);
      gmsa::FlopsSettings fs = gmsa::flops_settings_from(file);
      gmsa::FlopsConfig fc = gmsa::FlopsConfig::from_model(mc);
      fc.context_len = fs.context_len;
      fc.question_len = fs.question_len;
      fc.answer_len = fs.answer_len;
      fc.rate = static_cast<double>(fs.rate);
      fc.kv_cached = fs.kv_cached;
      std::cout << gmsa::speedup_report(fc).to_text();
      if (!fl_sweep.empty()) {
        std::ostringstream csv;
        csv << "context_len,rate,compression_flops,generation_flops,total_flops,baseline_total,"
               "speedup_ratio\n";
        std::istringstream ls(fl_sweep);
        std::string item;
        while (std::getline(ls, item, ',')) {
          const long long l = std::stoll(item);
          for (int r : mc.allowed_rates) {
            gmsa::FlopsConfig sc = fc;
            sc.context_len = l;
            sc.rate = static_cast<double>(r);
            const auto rep = gmsa::speedup_report(sc);
            csv << l << "," << r << "," << rep.compression_flops << "," << rep.generation_flops
                << "," << rep.total_flops << "," << rep.baseline_total << ","
                << rep.speedup_ratio << "\n";
          }
        }
        if (fl_csv.empty()) {
          std::cout << csv.str();
        } else {
          std::ofstream os(fl_csv);
          os << csv.str();
          std::fprintf(stderr, "wrote sweep to %s\n", fl_csv.c_str());
        }
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
