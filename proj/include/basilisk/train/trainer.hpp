#pragma once

// Training loops: class-weighted fine-tuning with optional adversarial
// perturbation, and causal-LM pretraining on FIM-rearranged sequences.
// Both log line-delimited JSON records and checkpoint once per epoch.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "basilisk/data/sample.hpp"
#include "basilisk/data/tokenizer.hpp"
#include "basilisk/metrics/metrics.hpp"
#include "basilisk/model/checkpoint.hpp"
#include "basilisk/train/fim.hpp"
#include "basilisk/train/imbalance.hpp"
#include "basilisk/train/optimizer.hpp"
#include "basilisk/train/sift.hpp"
#include "json.hpp"

namespace basilisk::train {

struct TrainConfig {
  OptimizerConfig optimizer = OptimizerConfig::fine_tuning();
  FimConfig fim;
  SiftConfig sift;
  /// Scale each sample's loss by its class weight.
  bool class_weighting = true;
  /// Draw batches with the class-weighted sampler instead of shuffled passes.
  bool weighted_sampler = false;
  std::uint64_t seed = 0;
  /// Directory for the log and checkpoints; empty disables file output.
  std::string output_dir;
  /// Truncation length in tokens; 0 uses the model's max_length.
  std::size_t max_tokens = 0;
  /// Evaluate the training split at the end of every epoch.
  bool eval_train = true;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncodedSample {
  std::vector<std::uint32_t> tokens;
  int label = 0;
  std::optional<std::string> cwe;
};

inline std::vector<EncodedSample> encode_samples(std::span<const data::LabeledSample> samples, std::size_t max_tokens) {
  data::ByteTokenizer tok;
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    EncodedSample e{tok.encode(s.code), s.label, s.cwe};
    if (max_tokens && e.tokens.size() > max_tokens) e.tokens.resize(max_tokens);
    out.push_back(std::move(e));
  }
  return out;
}

/// Evaluation-mode predictions; score is the positive-class probability.
template <class S>
std::vector<metrics::Prediction> predict(const model::Model<S>& m, std::span<const EncodedSample> samples) {
  std::vector<metrics::Prediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Tensor<S> logits = m.logits(s.tokens, model::Mode::Classify);
    Tensor<S> p = ops::softmax_rows(logits);
    metrics::Prediction pr;
    pr.label = s.label;
    pr.score = static_cast<double>(p(0, 1));
    pr.predicted = pr.score >= 0.5 ? 1 : 0;
    pr.cwe = s.cwe;
    pr.length = s.tokens.size();
    out.push_back(std::move(pr));
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0;
  std::optional<metrics::MetricsReport> train, eval;
  double seconds = 0;
};

struct TrainSummary {
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
  std::string last_checkpoint;
};

/// Return false to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochRecord&)>;

namespace detail {

class RunLog {
 public:
  RunLog(const std::string& dir, const nlohmann::json& header) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    os_.open(std::filesystem::path(dir) / "train_log.jsonl", std::ios::app);
    if (!os_) throw TrainingError("cannot open log in " + dir);
    write(header);
  }
  void write(const nlohmann::json& j) {
    if (os_.is_open()) os_ << j.dump() << '\n' << std::flush;
  }

 private:
  std::ofstream os_;
};

inline nlohmann::json header_json(const TrainConfig& cfg, const model::ModelConfig& mc, const char* objective) {
  const auto& o = cfg.optimizer;
  return {{"event", "header"},
          {"objective", objective},
          {"seed", cfg.seed},
          {"model", model::to_json(mc)},
          {"optimizer",
           {{"learning_rate", o.learning_rate},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"weight_decay", o.weight_decay},
            {"warmup_ratio", o.warmup_ratio},
            {"batch_size", o.batch_size},
            {"epochs", o.epochs},
            {"max_grad_norm", o.max_grad_norm}}},
          {"fim", {{"fim_rate", cfg.fim.fim_rate}, {"spm_rate", cfg.fim.spm_rate}}},
          {"sift",
           {{"enabled", cfg.sift.enabled},
            {"perturbation_lr", cfg.sift.perturbation_lr},
            {"init_magnitude", cfg.sift.init_magnitude},
            {"adversarial_weight", cfg.sift.adversarial_weight}}},
          {"class_weighting", cfg.class_weighting},
          {"weighted_sampler", cfg.weighted_sampler},
          {"max_tokens", cfg.max_tokens}};
}

inline void check_finite(double loss, std::size_t step, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw TrainingError("non-finite loss (" + std::to_string(loss) + ") at step " + std::to_string(step) +
                        " (epoch " + std::to_string(epoch) + ")");
}

/// Runs one sample's forward/backward, reporting numeric failures with the step.
template <class F>
void guarded_sample(std::size_t step, std::size_t epoch, F&& body) {
  try {
    body();
  } catch (const NumericError& e) {
    throw TrainingError("non-finite value at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                        "): " + e.what());
  }
}

template <class S>
std::string write_epoch_checkpoint(const model::Model<S>& m, const std::string& dir, std::size_t epoch) {
  if (dir.empty()) return {};
  const auto path = (std::filesystem::path(dir) / ("checkpoint-epoch" + std::to_string(epoch) + ".ckpt")).string();
  model::save_checkpoint(m, path);
  model::save_checkpoint(m, (std::filesystem::path(dir) / "checkpoint.ckpt").string());
  return path;
}

/// Batches of indices for one epoch: a shuffled pass, or sampler draws of equal count.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, Rng& rng,
                                                           WeightedBatchSampler* sampler) {
  std::vector<std::vector<std::size_t>> out;
  const std::size_t steps = (n + batch - 1) / batch;
  if (sampler) {
    for (std::size_t s = 0; s < steps; ++s) out.push_back(sampler->next_batch());
    return out;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t s = 0; s < steps; ++s)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s * batch),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (s + 1) * batch)));
  return out;
}

}  // namespace detail

/// Class-weighted fine-tuning of the classification head and all layers.
template <class S>
TrainSummary train_classifier(model::Model<S>& m, std::span<const EncodedSample> train_set,
                              std::span<const EncodedSample> eval_set, const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {}) {
  if (train_set.empty()) throw TrainingError("train: empty training set");
  cfg.optimizer.validate();
  if (cfg.sift.enabled) cfg.sift.validate();
  std::vector<int> labels;
  for (const auto& s : train_set) labels.push_back(s.label);
  const ClassWeights weights = cfg.class_weighting ? class_weights_from_labels(labels, m.config().n_classes)
                                                   : ClassWeights{std::vector<double>(m.config().n_classes, 1.0), {}, 0};
  std::optional<WeightedBatchSampler> sampler;
  if (cfg.weighted_sampler)
    sampler.emplace(labels, class_weights_from_labels(labels, m.config().n_classes), cfg.optimizer.batch_size,
                    derive_rng(cfg.seed, 5)());

  Rng shuffle_rng = derive_rng(cfg.seed, 1);
  Rng dropout_rng = derive_rng(cfg.seed, 2);
  Rng sift_rng = derive_rng(cfg.seed, 3);
  const std::size_t batch = cfg.optimizer.batch_size;
  const std::size_t steps_per_epoch = (train_set.size() + batch - 1) / batch;
  WarmupLinearSchedule schedule(cfg.optimizer.learning_rate, steps_per_epoch * cfg.optimizer.epochs,
                                cfg.optimizer.warmup_ratio);
  AdamW<S> opt(cfg.optimizer);
  detail::RunLog log(cfg.output_dir, detail::header_json(cfg, m.config(), "classify"));
  TrainSummary summary;

  for (std::size_t epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double epoch_loss = 0;
    for (const auto& idx : detail::epoch_batches(train_set.size(), batch, shuffle_rng, sampler ? &*sampler : nullptr)) {
      m.parameters().zero_grad();
      double batch_loss = 0;
      for (std::size_t i : idx) detail::guarded_sample(summary.steps, epoch, [&] {
        const EncodedSample& s = train_set[i];
        Tape<S> tape;
        const std::optional<Rng> dropout_state =
            m.config().dropout > 0 ? std::optional<Rng>(dropout_rng) : std::nullopt;
        model::ForwardOptions<S> fo;
        fo.dropout_rng = &dropout_rng;
        fo.collect_aux = true;
        Var<S> emb = m.embed(tape, s.tokens);
        auto fr = m.forward_embeddings(tape, emb, model::Mode::Classify, fo);
        const int label[] = {s.label};
        Var<S> loss = weighted_cross_entropy(fr.logits, std::span<const int>(label), weights);
        if (fr.aux_loss) loss = ad::add(loss, *fr.aux_loss);
        if (cfg.sift.enabled && cfg.sift.adversarial_weight > 0) {
          Var<S> adv = sift_adversarial_loss(tape, m, emb, fr.logits, cfg.sift, sift_rng, dropout_state);
          loss = ad::add(loss, ad::scale(adv, static_cast<S>(cfg.sift.adversarial_weight)));
        }
        const double lv = static_cast<double>(loss.value().item());
        detail::check_finite(lv, summary.steps, epoch);
        batch_loss += lv / static_cast<double>(idx.size());
        tape.backward(loss, S{1} / static_cast<S>(idx.size()));
      });
      clip_grad_norm(m.parameters(), cfg.optimizer.max_grad_norm);
      const double lr = schedule(summary.steps);
      opt.step(m.parameters(), lr);
      log.write({{"event", "step"}, {"step", summary.steps}, {"epoch", epoch}, {"lr", lr}, {"loss", batch_loss}});
      ++summary.steps;
      epoch_loss += batch_loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    if (cfg.eval_train) rec.train = metrics::overall_report(predict(m, train_set));
    if (!eval_set.empty()) rec.eval = metrics::overall_report(predict(m, eval_set));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json ej{{"event", "epoch"}, {"epoch", epoch}, {"loss", rec.mean_loss}, {"seconds", rec.seconds}};
    if (rec.train) ej["train"] = metrics::to_json(*rec.train);
    if (rec.eval) ej["eval"] = metrics::to_json(*rec.eval);
    log.write(ej);
    summary.last_checkpoint = detail::write_epoch_checkpoint(m, cfg.output_dir, epoch);
    summary.epochs.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
  }
  return summary;
}

/// Next-token cross-entropy over a token sequence (mean over T-1 positions).
template <class S>
Var<S> next_token_loss(Var<S> logits, std::span<const std::uint32_t> tokens) {
  const std::size_t T = tokens.size();
  if (T < 2) throw std::invalid_argument("next_token_loss: need at least two tokens");
  Var<S> pred = ad::slice_rows(logits, 0, T - 1);
  std::vector<std::size_t> targets(tokens.begin() + 1, tokens.end());
  return ad::cross_entropy_rows(pred, std::move(targets), std::vector<S>(T - 1, S{1}));
}

/// Causal-LM pretraining; each sequence is FIM-rearranged with the configured rates.
template <class S>
TrainSummary pretrain_lm(model::Model<S>& m, std::span<const EncodedSample> corpus, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (corpus.empty()) throw TrainingError("pretrain: empty corpus");
  cfg.optimizer.validate();
  cfg.fim.validate();
  Rng shuffle_rng = derive_rng(cfg.seed, 1);
  Rng fim_rng = derive_rng(cfg.seed, 4);
  const std::size_t batch = cfg.optimizer.batch_size;
  const std::size_t steps_per_epoch = (corpus.size() + batch - 1) / batch;
  WarmupLinearSchedule schedule(cfg.optimizer.learning_rate, steps_per_epoch * cfg.optimizer.epochs,
                                cfg.optimizer.warmup_ratio);
  AdamW<S> opt(cfg.optimizer);
  detail::RunLog log(cfg.output_dir, detail::header_json(cfg, m.config(), "clm+fim"));
  TrainSummary summary;
  const std::size_t limit = cfg.max_tokens ? std::min(cfg.max_tokens, m.config().max_length) : m.config().max_length;

  for (std::size_t epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double epoch_loss = 0;
    for (const auto& idx : detail::epoch_batches(corpus.size(), batch, shuffle_rng, nullptr)) {
      m.parameters().zero_grad();
      double batch_loss = 0;
      for (std::size_t i : idx) detail::guarded_sample(summary.steps, epoch, [&] {
        std::vector<std::uint32_t> seq = fim_transform<Rng>(corpus[i].tokens, cfg.fim, fim_rng).tokens;
        seq.insert(seq.begin(), data::SpecialTokens::bos);
        seq.push_back(data::SpecialTokens::eos);
        if (seq.size() > limit) seq.resize(limit);
        if (seq.size() < 2) return;
        Tape<S> tape;
        model::ForwardOptions<S> fo;
        fo.collect_aux = true;
        auto fr = m.forward(tape, seq, model::Mode::LanguageModel, fo);
        Var<S> loss = next_token_loss(fr.logits, seq);
        if (fr.aux_loss) loss = ad::add(loss, *fr.aux_loss);
        const double lv = static_cast<double>(loss.value().item());
        detail::check_finite(lv, summary.steps, epoch);
        batch_loss += lv / static_cast<double>(idx.size());
        tape.backward(loss, S{1} / static_cast<S>(idx.size()));
      });
      clip_grad_norm(m.parameters(), cfg.optimizer.max_grad_norm);
      const double lr = schedule(summary.steps);
      opt.step(m.parameters(), lr);
      log.write({{"event", "step"}, {"step", summary.steps}, {"epoch", epoch}, {"lr", lr}, {"loss", batch_loss}});
      ++summary.steps;
      epoch_loss += batch_loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.write({{"event", "epoch"}, {"epoch", epoch}, {"loss", rec.mean_loss}, {"seconds", rec.seconds}});
    summary.last_checkpoint = detail::write_epoch_checkpoint(m, cfg.output_dir, epoch);
    summary.epochs.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
  }
  return summary;
}

}  // namespace basilisk::train
