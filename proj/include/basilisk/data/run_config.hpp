#pragma once

// Flat, typed key-value run configuration. A config file is a single JSON
// object whose keys are listed by RunConfig::fields(); unknown keys and
// mistyped values are rejected. CLI flags are applied after the file.

#include <cstdint>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "basilisk/model/config.hpp"
#include "basilisk/train/trainer.hpp"
#include "json.hpp"

namespace basilisk::data {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  model::ModelConfig model = model::ModelConfig::desk();
  train::TrainConfig train;
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  /// "double" or "float".
  std::string precision = "double";

  struct Field {
    std::string key;
    std::string type;  // bool | int | float | string
    std::string doc;
    std::function<void(RunConfig&, const nlohmann::json&)> set;
    std::function<nlohmann::json(const RunConfig&)> get;
  };

  static const std::vector<Field>& fields() {
    static const std::vector<Field> table = build_fields();
    return table;
  }

  /// Applies every key of a JSON object.
  void apply(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (const auto& [key, value] : j.items()) set(key, value);
  }

  void set(const std::string& key, const nlohmann::json& value) {
    for (const auto& f : fields()) {
      if (f.key != key) continue;
      const bool ok = (f.type == "bool" && value.is_boolean()) ||
                      (f.type == "int" && (value.is_number_unsigned() ||
                                           (value.is_number_integer() && value.get<long long>() >= 0))) ||
                      (f.type == "float" && value.is_number()) || (f.type == "string" && value.is_string());
      if (!ok) throw ConfigError("config: key '" + key + "' expects " + f.type + ", got " + value.dump());
      f.set(*this, value);
      return;
    }
    throw ConfigError("config: unknown key '" + key + "'");
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config: " + path + ": " + e.what());
    }
    apply(j);
  }

  /// Effective configuration as a flat object (echoed into run logs).
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : fields()) j[f.key] = f.get(*this);
    return j;
  }

  /// Propagates shared values and validates every section.
  void finalize() {
    model.sync();
    model.validate();
    train.seed = seed;
    train.optimizer.validate();
    train.fim.validate();
    if (train.sift.enabled) train.sift.validate();
    if (precision != "double" && precision != "float")
      throw ConfigError("config: precision must be \"double\" or \"float\"");
  }

 private:
  template <class T, class Get>
  static Field make(std::string key, std::string type, std::string doc, Get get) {
    return Field{std::move(key), std::move(type), std::move(doc),
                 [get](RunConfig& c, const nlohmann::json& v) { get(c) = v.get<T>(); },
                 [get](const RunConfig& c) { return nlohmann::json(get(const_cast<RunConfig&>(c))); }};
  }

  static std::vector<Field> build_fields() {
    using R = RunConfig;
    std::vector<Field> f;
    f.push_back(make<std::uint64_t>("seed", "int", "base RNG seed", [](R& c) -> auto& { return c.seed; }));
    f.push_back(make<std::string>("output_dir", "string", "run directory", [](R& c) -> auto& { return c.output_dir; }));
    f.push_back(make<std::string>("precision", "string", "double | float", [](R& c) -> auto& { return c.precision; }));
    f.push_back(make<std::size_t>("d_model", "int", "hidden width", [](R& c) -> auto& { return c.model.d_model; }));
    f.push_back(make<std::size_t>("n_layers", "int", "layer count", [](R& c) -> auto& { return c.model.n_layers; }));
    f.push_back(make<std::size_t>("attention_offset", "int", "first attention index",
                                  [](R& c) -> auto& { return c.model.attention_offset; }));
    f.push_back(make<std::size_t>("attention_period", "int", "attention spacing",
                                  [](R& c) -> auto& { return c.model.attention_period; }));
    f.push_back(make<std::size_t>("max_length", "int", "longest accepted sequence",
                                  [](R& c) -> auto& { return c.model.max_length; }));
    f.push_back(make<double>("dropout", "float", "classifier-head dropout", [](R& c) -> auto& { return c.model.dropout; }));
    f.push_back(make<std::size_t>("head_hidden", "int", "head width 1 (0 = d_model)",
                                  [](R& c) -> auto& { return c.model.head_hidden; }));
    f.push_back(make<std::size_t>("head_bottleneck", "int", "head width 2 (0 = d_model / 2)",
                                  [](R& c) -> auto& { return c.model.head_bottleneck; }));
    f.push_back(make<bool>("block_norm", "bool", "LayerNorm on each block input",
                           [](R& c) -> auto& { return c.model.block_norm; }));
    f.push_back(make<double>("embedding_std", "float", "embedding init stddev",
                             [](R& c) -> auto& { return c.model.embedding_std; }));
    f.push_back(make<std::size_t>("d_state", "int", "SSM state size", [](R& c) -> auto& { return c.model.ssm.d_state; }));
    f.push_back(make<std::size_t>("d_conv", "int", "SSM conv width", [](R& c) -> auto& { return c.model.ssm.d_conv; }));
    f.push_back(make<std::size_t>("expand", "int", "SSM expansion", [](R& c) -> auto& { return c.model.ssm.expand; }));
    f.push_back(make<std::size_t>("dt_rank", "int", "delta projection rank (0 = auto)",
                                  [](R& c) -> auto& { return c.model.ssm.dt_rank; }));
    f.push_back(make<std::size_t>("n_heads", "int", "attention heads", [](R& c) -> auto& { return c.model.attention.n_heads; }));
    f.push_back(make<std::size_t>("segment_length", "int", "attention segment length",
                                  [](R& c) -> auto& { return c.model.attention.segment_length; }));
    f.push_back(make<bool>("memory_enabled", "bool", "compressive-memory path",
                           [](R& c) -> auto& { return c.model.attention.memory_enabled; }));
    f.push_back(make<std::size_t>("n_experts", "int", "MoE experts", [](R& c) -> auto& { return c.model.moe.n_experts; }));
    f.push_back(make<std::size_t>("k_active", "int", "experts per token", [](R& c) -> auto& { return c.model.moe.k_active; }));
    f.push_back(make<std::size_t>("hidden_mult", "int", "expert width multiplier",
                                  [](R& c) -> auto& { return c.model.moe.hidden_mult; }));
    f.push_back(make<bool>("aux_loss", "bool", "MoE balancing loss", [](R& c) -> auto& { return c.model.moe.aux_loss; }));
    f.push_back(make<double>("aux_loss_weight", "float", "MoE balancing weight",
                             [](R& c) -> auto& { return c.model.moe.aux_loss_weight; }));
    f.push_back(make<double>("learning_rate", "float", "peak learning rate",
                             [](R& c) -> auto& { return c.train.optimizer.learning_rate; }));
    f.push_back(make<double>("beta1", "float", "Adam beta1", [](R& c) -> auto& { return c.train.optimizer.beta1; }));
    f.push_back(make<double>("beta2", "float", "Adam beta2", [](R& c) -> auto& { return c.train.optimizer.beta2; }));
    f.push_back(make<double>("adam_eps", "float", "Adam epsilon", [](R& c) -> auto& { return c.train.optimizer.eps; }));
    f.push_back(make<double>("weight_decay", "float", "decoupled weight decay",
                             [](R& c) -> auto& { return c.train.optimizer.weight_decay; }));
    f.push_back(make<double>("warmup_ratio", "float", "warmup fraction of steps",
                             [](R& c) -> auto& { return c.train.optimizer.warmup_ratio; }));
    f.push_back(make<std::size_t>("batch_size", "int", "samples per step",
                                  [](R& c) -> auto& { return c.train.optimizer.batch_size; }));
    f.push_back(make<std::size_t>("epochs", "int", "training epochs", [](R& c) -> auto& { return c.train.optimizer.epochs; }));
    f.push_back(make<double>("max_grad_norm", "float", "gradient clip (0 = off)",
                             [](R& c) -> auto& { return c.train.optimizer.max_grad_norm; }));
    f.push_back(make<double>("fim_rate", "float", "FIM probability", [](R& c) -> auto& { return c.train.fim.fim_rate; }));
    f.push_back(make<double>("spm_rate", "float", "SPM probability among FIM",
                             [](R& c) -> auto& { return c.train.fim.spm_rate; }));
    f.push_back(make<bool>("sift", "bool", "adversarial perturbation", [](R& c) -> auto& { return c.train.sift.enabled; }));
    f.push_back(make<double>("sift_lr", "float", "perturbation step size",
                             [](R& c) -> auto& { return c.train.sift.perturbation_lr; }));
    f.push_back(make<double>("sift_init_magnitude", "float", "initial perturbation stddev",
                             [](R& c) -> auto& { return c.train.sift.init_magnitude; }));
    f.push_back(make<double>("sift_weight", "float", "adversarial loss weight",
                             [](R& c) -> auto& { return c.train.sift.adversarial_weight; }));
    f.push_back(make<bool>("class_weighting", "bool", "class-weighted loss",
                           [](R& c) -> auto& { return c.train.class_weighting; }));
    f.push_back(make<bool>("weighted_sampler", "bool", "class-weighted batch sampling",
                           [](R& c) -> auto& { return c.train.weighted_sampler; }));
    f.push_back(make<std::size_t>("max_tokens", "int", "truncation length (0 = max_length)",
                                  [](R& c) -> auto& { return c.train.max_tokens; }));
    return f;
  }
};

/// Defaults for a subcommand: pretraining or fine-tuning optimizer presets.
inline RunConfig default_run_config(bool pretraining) {
  RunConfig c;
  c.train.optimizer = pretraining ? train::OptimizerConfig::pretraining() : train::OptimizerConfig::fine_tuning();
  return c;
}

}  // namespace basilisk::data
