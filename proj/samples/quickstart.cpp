// Builds a small model, fine-tunes it on a planted corpus and prints metrics.

#include <iostream>

#include "basilisk/basilisk.hpp"

using namespace basilisk;

int main() {
  model::ModelConfig cfg = model::ModelConfig::desk();
  cfg.d_model = 32;
  cfg.n_layers = 6;
  cfg.attention.n_heads = 4;
  cfg.attention.segment_length = 32;
  cfg.sync();
  model::Model<double> m(cfg, 1);
  std::cout << "schedule:";
  for (auto k : m.schedule()) std::cout << ' ' << model::to_string(k);
  std::cout << "\nparameters: " << m.parameters().scalar_count() << '\n';

  std::vector<data::LabeledSample> train_raw, test_raw;
  for (auto& s : data::generate_planted_corpus(128, 0, 7)) (s.split == data::Split::Test ? test_raw : train_raw).push_back(s);
  const auto train_set = train::encode_samples(train_raw, 0);
  const auto test_set = train::encode_samples(test_raw, 0);

  train::TrainConfig tc;
  tc.optimizer.learning_rate = 1e-4;
  tc.optimizer.epochs = 3;
  tc.sift.enabled = false;
  train::train_classifier(m, train_set, test_set, tc, [](const train::EpochRecord& r) {
    std::cout << "epoch " << r.epoch << " loss " << r.mean_loss << " held-out F1 " << r.eval->f1.value_or(0) << '\n';
    return true;
  });
  const auto report = metrics::grouped_report(train::predict(m, test_set), metrics::Grouping::LengthBin);
  std::cout << metrics::format_table(report);
}
