#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "basilisk/attention/wb_attention.hpp"
#include "basilisk/moe/moe.hpp"
#include "basilisk/ssm/mamba.hpp"
#include "json.hpp"

namespace basilisk::model {

enum class LayerKind { Mamba, MoE, Attention };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Mamba: return "Mamba";
    case LayerKind::MoE: return "MoE";
    case LayerKind::Attention: return "Attention";
  }
  return "?";
}

using LayerSchedule = std::vector<LayerKind>;

/// Interleaving rule: Attention when i >= offset and (i - offset) % period == 0,
/// otherwise MoE at odd indices, otherwise Mamba. Attention is checked first.
inline LayerSchedule build_schedule(std::size_t n_layers, std::size_t offset = 2, std::size_t period = 8) {
  if (period == 0) throw std::invalid_argument("build_schedule: period must be >= 1");
  LayerSchedule s;
  s.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    if (i >= offset && (i - offset) % period == 0)
      s.push_back(LayerKind::Attention);
    else if (i % 2 == 1)
      s.push_back(LayerKind::MoE);
    else
      s.push_back(LayerKind::Mamba);
  }
  return s;
}

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 12;
  std::size_t attention_offset = 2;
  std::size_t attention_period = 8;
  std::size_t vocab_size = 262;
  std::size_t max_length = 128000;
  /// Classification-head dropout.
  double dropout = 0.1;
  /// Classification head widths; 0 selects d_model and d_model / 2.
  std::size_t head_hidden = 0;
  std::size_t head_bottleneck = 0;
  std::size_t n_classes = 2;
  double layer_norm_eps = 1e-5;
  double embedding_std = 0.02;
  /// LayerNorm on each block's input: h_i = Layer_i(LN_i(h_{i-1})) + h_{i-1}.
  bool block_norm = true;

  ssm::SsmConfig ssm;
  attention::AttentionConfig attention;
  moe::MoeConfig moe;

  std::size_t hidden1() const { return head_hidden ? head_hidden : d_model; }
  std::size_t hidden2() const { return head_bottleneck ? head_bottleneck : d_model / 2; }

  /// Propagates d_model into the sub-layer configs.
  ModelConfig& sync() {
    ssm.d_model = d_model;
    attention.d_model = d_model;
    moe.d_model = d_model;
    return *this;
  }

  void validate() const {
    if (n_layers == 0) throw std::invalid_argument("model config: n_layers must be >= 1");
    if (attention_period == 0) throw std::invalid_argument("model config: attention_period must be >= 1");
    if (d_model == 0 || vocab_size == 0) throw std::invalid_argument("model config: empty dimensions");
    if (ssm.d_model != d_model || attention.d_model != d_model || moe.d_model != d_model)
      throw std::invalid_argument("model config: sub-layer d_model out of sync");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("model config: dropout must be in [0, 1)");
    if (n_classes < 2) throw std::invalid_argument("model config: n_classes must be >= 2");
    attention.validate();
    moe.validate();
  }

  LayerSchedule schedule() const { return build_schedule(n_layers, attention_offset, attention_period); }

  /// Default desk-scale configuration.
  static ModelConfig desk() {
    ModelConfig c;
    c.sync();
    return c;
  }

  /// Full-width configuration (d_model 512, head widths 512 / 256).
  static ModelConfig full_scale(std::size_t n_layers = 24) {
    ModelConfig c;
    c.d_model = 512;
    c.n_layers = n_layers;
    c.attention.n_heads = 8;
    c.attention.segment_length = 2048;
    c.sync();
    return c;
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"d_model", c.d_model},
      {"n_layers", c.n_layers},
      {"attention_offset", c.attention_offset},
      {"attention_period", c.attention_period},
      {"vocab_size", c.vocab_size},
      {"max_length", c.max_length},
      {"dropout", c.dropout},
      {"head_hidden", c.head_hidden},
      {"head_bottleneck", c.head_bottleneck},
      {"n_classes", c.n_classes},
      {"layer_norm_eps", c.layer_norm_eps},
      {"embedding_std", c.embedding_std},
      {"block_norm", c.block_norm},
      {"ssm", {{"d_state", c.ssm.d_state}, {"d_conv", c.ssm.d_conv}, {"expand", c.ssm.expand}, {"dt_rank", c.ssm.dt_rank}}},
      {"attention",
       {{"n_heads", c.attention.n_heads},
        {"segment_length", c.attention.segment_length},
        {"epsilon", c.attention.epsilon},
        {"memory_enabled", c.attention.memory_enabled}}},
      {"moe",
       {{"n_experts", c.moe.n_experts},
        {"k_active", c.moe.k_active},
        {"hidden_mult", c.moe.hidden_mult},
        {"aux_loss", c.moe.aux_loss},
        {"aux_loss_weight", c.moe.aux_loss_weight}}},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.attention_offset = j.at("attention_offset").get<std::size_t>();
  c.attention_period = j.at("attention_period").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_length = j.at("max_length").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.head_bottleneck = j.at("head_bottleneck").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.embedding_std = j.at("embedding_std").get<double>();
  c.block_norm = j.at("block_norm").get<bool>();
  const auto& s = j.at("ssm");
  c.ssm.d_state = s.at("d_state").get<std::size_t>();
  c.ssm.d_conv = s.at("d_conv").get<std::size_t>();
  c.ssm.expand = s.at("expand").get<std::size_t>();
  c.ssm.dt_rank = s.at("dt_rank").get<std::size_t>();
  const auto& a = j.at("attention");
  c.attention.n_heads = a.at("n_heads").get<std::size_t>();
  c.attention.segment_length = a.at("segment_length").get<std::size_t>();
  c.attention.epsilon = a.at("epsilon").get<double>();
  c.attention.memory_enabled = a.at("memory_enabled").get<bool>();
  const auto& m = j.at("moe");
  c.moe.n_experts = m.at("n_experts").get<std::size_t>();
  c.moe.k_active = m.at("k_active").get<std::size_t>();
  c.moe.hidden_mult = m.at("hidden_mult").get<std::size_t>();
  c.moe.aux_loss = m.at("aux_loss").get<bool>();
  c.moe.aux_loss_weight = m.at("aux_loss_weight").get<double>();
  c.sync();
  c.validate();
  return c;
}

}  // namespace basilisk::model
