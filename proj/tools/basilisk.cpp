// basilisk command-line interface.
//
//   basilisk pretrain         --dataset FILE [--config FILE] [--seed N] [--checkpoint INIT]
//   basilisk finetune         --dataset FILE [--config FILE] [--seed N] [--checkpoint INIT]
//   basilisk eval             --checkpoint FILE --dataset FILE [--group-by cwe|length]
//   basilisk bench            [--lengths 1024,2048,...] [--budget-bytes N] [--seed N]
//   basilisk gen-data         [--n N] [--gap G] [--seed N] [--out FILE]
//   basilisk inspect-schedule [--layers N | --config FILE]
//
// Output goes to --output-dir, else the config's output_dir, else
// $BASILISK_OUTPUT_DIR, else ./runs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "basilisk/basilisk.hpp"

namespace fs = std::filesystem;
using namespace basilisk;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string checkpoint;
  std::string group_by;
  std::optional<std::size_t> layers;
  std::vector<std::size_t> lengths{1024, 2048, 4096, 8192, 16384};
  std::size_t budget_bytes = 64ull << 20;
  std::size_t n = 512;
  std::size_t gap = 0;
  std::string out;
  std::string output_dir;
};

data::RunConfig resolve_config(const Options& o, bool pretraining) {
  data::RunConfig rc = data::default_run_config(pretraining);
  if (const char* env = std::getenv("BASILISK_OUTPUT_DIR"); env && *env) rc.output_dir = env;
  if (!o.config_path.empty()) rc.load_file(o.config_path);
  if (o.seed) rc.seed = *o.seed;
  if (o.layers) rc.model.n_layers = *o.layers;
  if (!o.output_dir.empty()) rc.output_dir = o.output_dir;
  rc.finalize();
  rc.train.output_dir = rc.output_dir;
  return rc;
}

void split_samples(const std::vector<data::LabeledSample>& all, std::vector<data::LabeledSample>& train,
                   std::vector<data::LabeledSample>& held_out) {
  for (const auto& s : all) (s.split == data::Split::Train ? train : held_out).push_back(s);
}

template <class S>
std::unique_ptr<model::Model<S>> make_or_load(const data::RunConfig& rc, const std::string& checkpoint) {
  if (checkpoint.empty()) return std::make_unique<model::Model<S>>(rc.model, rc.seed);
  std::cerr << "initializing from " << checkpoint << " (architecture taken from the checkpoint)\n";
  return model::load_checkpoint<S>(checkpoint);
}

template <class S>
int run_finetune(const data::RunConfig& rc, const Options& o) {
  const auto ingest = data::ingest_jsonl(o.dataset);
  if (!ingest.errors.empty()) std::cerr << ingest.error_summary() << '\n';
  std::vector<data::LabeledSample> train_raw, held_raw;
  split_samples(ingest.samples, train_raw, held_raw);
  if (train_raw.empty()) throw std::runtime_error("finetune: dataset has no train-split records");
  auto m = make_or_load<S>(rc, o.checkpoint);
  const std::size_t limit = rc.train.max_tokens ? rc.train.max_tokens : m->config().max_length;
  const auto train_set = train::encode_samples(train_raw, limit);
  const auto held_set = train::encode_samples(held_raw, limit);
  std::cout << "finetune: " << train_set.size() << " train / " << held_set.size() << " held-out samples, "
            << m->parameters().scalar_count() << " parameters\n";
  const auto summary = train::train_classifier(*m, train_set, held_set, rc.train, [](const train::EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  loss " << r.mean_loss;
    if (r.train && r.train->f1) std::cout << "  train_f1 " << *r.train->f1;
    if (r.eval && r.eval->f1) std::cout << "  eval_f1 " << *r.eval->f1;
    std::cout << "  (" << r.seconds << " s)" << std::endl;
    return true;
  });
  std::cout << "checkpoint: " << summary.last_checkpoint << '\n';
  return 0;
}

template <class S>
int run_pretrain(const data::RunConfig& rc, const Options& o) {
  const auto ingest = data::ingest_jsonl(o.dataset);
  if (!ingest.errors.empty()) std::cerr << ingest.error_summary() << '\n';
  auto m = make_or_load<S>(rc, o.checkpoint);
  const auto corpus = train::encode_samples(ingest.samples, 0);
  std::cout << "pretrain: " << corpus.size() << " sequences, " << m->parameters().scalar_count() << " parameters\n";
  const auto summary = train::pretrain_lm(*m, corpus, rc.train, [](const train::EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  loss " << r.mean_loss << "  (" << r.seconds << " s)" << std::endl;
    return true;
  });
  std::cout << "checkpoint: " << summary.last_checkpoint << '\n';
  return 0;
}

template <class S>
int run_eval(const data::RunConfig& rc, const Options& o) {
  auto m = model::load_checkpoint<S>(o.checkpoint);
  const auto ingest = data::ingest_jsonl(o.dataset);
  if (!ingest.errors.empty()) std::cerr << ingest.error_summary() << '\n';
  const auto samples = train::encode_samples(ingest.samples, m->config().max_length);
  const auto preds = train::predict(*m, samples);
  fs::create_directories(rc.output_dir);
  nlohmann::json doc;
  if (o.group_by.empty()) {
    const auto overall = metrics::overall_report(preds);
    doc = {{"schema", "basilisk.metrics/1"}, {"grouping", nullptr}, {"groups", nlohmann::json::array()},
           {"overall", metrics::to_json(overall)}};
    std::vector<metrics::MetricsReport> rows{overall};
    std::cout << metrics::format_table(rows, "Split");
  } else {
    const auto report = metrics::grouped_report(preds, metrics::parse_grouping(o.group_by));
    doc = metrics::to_json(report);
    std::cout << metrics::format_table(report);
  }
  const auto path = (fs::path(rc.output_dir) / "metrics.json").string();
  std::ofstream(path) << doc.dump(2) << '\n';
  std::cout << "report: " << path << '\n';
  return 0;
}

int run_bench(const data::RunConfig& rc, const Options& o) {
  bench::SuiteOptions so;
  so.budget_bytes = o.budget_bytes;
  so.seed = rc.seed;
  const auto results = bench::run_scaling_suite(o.lengths, so);
  std::cout << bench::format_table(results);
  fs::create_directories(rc.output_dir);
  const auto path = (fs::path(rc.output_dir) / "membench.json").string();
  std::ofstream(path) << bench::to_json(results).dump(2) << '\n';
  std::cout << "results: " << path << '\n';
  return 0;
}

int run_gen_data(const data::RunConfig& rc, const Options& o) {
  const auto corpus = data::generate_planted_corpus(o.n, o.gap, rc.seed);
  std::string path = o.out;
  if (path.empty()) {
    fs::create_directories(rc.output_dir);
    path = (fs::path(rc.output_dir) / "planted.jsonl").string();
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("gen-data: cannot write " + path);
  data::write_jsonl(os, corpus);
  std::cout << "wrote " << corpus.size() << " samples to " << path << '\n';
  return 0;
}

int run_inspect_schedule(const data::RunConfig& rc) {
  const auto schedule = rc.model.schedule();
  for (std::size_t i = 0; i < schedule.size(); ++i) std::cout << i << ' ' << model::to_string(schedule[i]) << '\n';
  std::cout << "parameters: " << model::count_parameters(rc.model) << '\n';
  return 0;
}

template <class F>
int dispatch_precision(const data::RunConfig& rc, F&& f) {
  return rc.precision == "float" ? f(float{}) : f(double{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"basilisk: hybrid state-space / compressive-attention / mixture-of-experts models"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run-config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "base RNG seed");
    sub->add_option("--output-dir", o.output_dir, "output directory (default: $BASILISK_OUTPUT_DIR or ./runs)");
  };

  auto* pretrain = app.add_subcommand("pretrain", "causal-LM + FIM pretraining");
  add_common(pretrain);
  pretrain->add_option("--dataset", o.dataset, "JSONL corpus")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--checkpoint", o.checkpoint, "initial checkpoint")->check(CLI::ExistingFile);
  pretrain->add_option("--layers", o.layers, "layer count");

  auto* finetune = app.add_subcommand("finetune", "class-weighted classification fine-tuning");
  add_common(finetune);
  finetune->add_option("--dataset", o.dataset, "JSONL dataset (split field selects train records)")
      ->required()
      ->check(CLI::ExistingFile);
  finetune->add_option("--checkpoint", o.checkpoint, "pretrained checkpoint")->check(CLI::ExistingFile);
  finetune->add_option("--layers", o.layers, "layer count");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write a metrics report");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", o.dataset, "JSONL dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--group-by", o.group_by, "cwe | length")->check(CLI::IsMember({"cwe", "length"}));

  auto* benchc = app.add_subcommand("bench", "attention peak-memory scaling benchmark");
  add_common(benchc);
  benchc->add_option("--lengths", o.lengths, "comma-separated ascending sequence lengths")->delimiter(',');
  benchc->add_option("--budget-bytes", o.budget_bytes, "byte budget per run");

  auto* gen = app.add_subcommand("gen-data", "write a planted-vulnerability corpus");
  add_common(gen);
  gen->add_option("--n", o.n, "number of samples")->check(CLI::Range(std::size_t{2}, std::size_t{10'000'000}));
  gen->add_option("--gap", o.gap, "filler bytes between allocation and write");
  gen->add_option("--out", o.out, "output path (default: <output-dir>/planted.jsonl)");

  auto* inspect = app.add_subcommand("inspect-schedule", "print the layer schedule");
  add_common(inspect);
  inspect->add_option("--layers", o.layers, "layer count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) {
      const auto chosen = app.get_subcommands();
      std::cerr << '\n' << (chosen.empty() ? app.help() : chosen.front()->help());
    }
    return code;
  }

  try {
    if (*pretrain) {
      const auto rc = resolve_config(o, true);
      return dispatch_precision(rc, [&](auto s) { return run_pretrain<decltype(s)>(rc, o); });
    }
    const auto rc = resolve_config(o, false);
    if (*finetune) return dispatch_precision(rc, [&](auto s) { return run_finetune<decltype(s)>(rc, o); });
    if (*eval) return dispatch_precision(rc, [&](auto s) { return run_eval<decltype(s)>(rc, o); });
    if (*benchc) return run_bench(rc, o);
    if (*gen) return run_gen_data(rc, o);
    if (*inspect) return run_inspect_schedule(rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
