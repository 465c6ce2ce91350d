// Command-line front end: data generation, training, evaluation, ablation
// sweeps, prediction and overlay rendering.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "secp/checkpoint.hpp"
#include "secp/data.hpp"
#include "secp/metrics.hpp"
#include "secp/network.hpp"
#include "secp/overlay.hpp"
#include "secp/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunConfig {
  secp::TrainConfig train;
  secp::NetworkConfig network;
  std::vector<int> stage_epochs;  // empty: default per variant
};

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* k) { return key == k; }) == allowed.end()) {
      throw secp::ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw secp::Error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw secp::FormatError("config '" + path + "': " + e.what());
  }
  check_keys(j, {"train", "network", "stage_epochs"}, "config");
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, {"lr0", "dr", "epochs", "batch_size", "seed", "momentum"}, "train");
    cfg.train.lr0 = t.value("lr0", cfg.train.lr0);
    cfg.train.dr = t.value("dr", cfg.train.dr);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.train.momentum = t.value("momentum", cfg.train.momentum);
  }
  if (j.contains("network")) {
    const json& n = j["network"];
    check_keys(n, {"in_channels", "num_classes", "base_width", "depth", "se_ratio"}, "network");
    cfg.network.in_channels = n.value("in_channels", cfg.network.in_channels);
    cfg.network.num_classes = n.value("num_classes", cfg.network.num_classes);
    cfg.network.base_width = n.value("base_width", cfg.network.base_width);
    cfg.network.depth = n.value("depth", cfg.network.depth);
    cfg.network.se_ratio = n.value("se_ratio", cfg.network.se_ratio);
  }
  if (j.contains("stage_epochs")) {
    cfg.stage_epochs = j["stage_epochs"].get<std::vector<int>>();
    if (cfg.stage_epochs.size() != 2 && cfg.stage_epochs.size() != 4) {
      throw secp::ConfigError("config: stage_epochs must have 2 or 4 entries");
    }
  }
  return cfg;
}

secp::StagePlan plan_for(secp::VariantId variant, const RunConfig& cfg) {
  if (cfg.stage_epochs.empty()) return secp::default_plan(variant, cfg.train.epochs);
  secp::StagePlan plan{cfg.stage_epochs};
  if (!secp::variant_is_cascade(variant) && plan.num_stages() == 4) {
    plan.stage_epochs.resize(2);  // non-cascades run the first two stages only
  }
  return plan;
}

secp::Mask mask_plane(const secp::Mask& batch_mask, int n) {
  const int H = batch_mask.shape[1], W = batch_mask.shape[2];
  secp::Mask m({H, W});
  std::copy_n(batch_mask.v.begin() + static_cast<std::ptrdiff_t>(n) * H * W, H * W, m.v.begin());
  return m;
}

secp::Tensor<float> as_batch(const secp::Tensor<float>& image) {
  return secp::Tensor<float>::from_data({1, 1, image.dim(1), image.dim(2)},
                                        {image.data().begin(), image.data().end()});
}

secp::FoldScores evaluate(secp::Network<float>& net, const std::vector<secp::Sample>& samples) {
  secp::OverlapTally tally;
  for (const secp::Sample& s : samples) {
    auto pred = secp::predict_mask(net, as_batch(s.image));
    tally.add(mask_plane(pred, 0), s.mask);
  }
  secp::FoldScores f;
  f.organs = tally.scores();
  return f;
}

double mean_defined_dice(const secp::FoldScores& scores) {
  double sum = 0;
  int n = 0;
  for (const secp::OrganScore& s : scores.organs) {
    if (!s.defined) continue;
    sum += s.dice;
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw secp::Error("cannot open '" + path.string() + "' for writing");
  out << text;
}

int worker_count(std::size_t jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SECP_THREADS")) n = std::atoi(env);
  n = std::max(1, std::min<int>(n, static_cast<int>(jobs)));
  return n;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::uint64_t seed = 0;
  int patients = 8;
  int slices = 4;
  int size = 64;
  std::string out;
};

void run_gen_data(const GenDataArgs& a) {
  auto samples = secp::generate_phantom(a.seed, a.patients, a.slices, a.size);
  secp::save_dataset(samples, a.out);
  std::cout << "wrote " << samples.size() << " samples to " << a.out << "\n";
}

struct TrainArgs {
  std::string variant = "secp-net";
  std::string data;
  int folds = 5;
  std::string config;
  std::string out;
};

struct FoldRun {
  secp::FoldScores validation;
  secp::TrainingLog last_log;
};

FoldRun train_one_fold(secp::VariantId variant, const RunConfig& cfg,
                       const std::vector<secp::Sample>& samples, const secp::FoldSplit& split,
                       int fold, const fs::path& fold_dir) {
  std::vector<secp::Sample> train_set, val_set;
  for (const secp::Sample& s : samples) {
    (split.fold_of(s.patient_id) == fold ? val_set : train_set).push_back(s);
  }
  if (train_set.empty() || val_set.empty()) {
    throw secp::ConfigError("fold " + std::to_string(fold) + " leaves an empty train or test set");
  }

  secp::TrainConfig fold_cfg = cfg.train;
  fold_cfg.seed = secp::mix_seed(cfg.train.seed, static_cast<std::uint64_t>(variant) + 1,
                                 static_cast<std::uint64_t>(fold) + 1);
  auto result = secp::staged_train<float>(variant, train_set, plan_for(variant, cfg), fold_cfg,
                                          cfg.network);

  if (!fold_dir.empty()) {
    fs::create_directories(fold_dir);
    for (std::size_t i = 0; i < result.stages.size(); ++i) {
      const auto& stage = result.stages[i];
      const std::string tag = "stage" + std::to_string(i + 1);
      secp::save_checkpoint(fold_dir / (tag + ".ckpt"), stage.checkpoint);
      write_text(fold_dir / (tag + "_log.csv"), stage.log.to_csv());
    }
  }

  FoldRun run;
  run.validation = evaluate(result.net, val_set);
  run.last_log = result.stages.back().log;
  if (!fold_dir.empty()) {
    write_text(fold_dir / "validation.json", secp::fold_scores_json(run.validation, fold));
  }
  return run;
}

void run_train(const TrainArgs& a) {
  const secp::VariantId variant = secp::variant_from_key(a.variant);
  const RunConfig cfg = load_run_config(a.config);
  auto samples = secp::load_dataset(a.data);
  auto split = secp::split_folds(secp::patient_ids(samples), a.folds, cfg.train.seed);

  const fs::path out(a.out);
  fs::create_directories(out);
  std::vector<secp::FoldScores> per_fold;
  for (int fold = 0; fold < a.folds; ++fold) {
    std::cout << "fold " << fold << ": training " << secp::variant_key(variant) << "\n";
    auto run = train_one_fold(variant, cfg, samples, split, fold,
                              out / ("fold" + std::to_string(fold)));
    per_fold.push_back(run.validation);
  }
  if (per_fold.size() >= 2) {
    auto report = secp::aggregate_folds(per_fold);
    write_text(out / "report.csv", secp::emit_table(report, secp::TableFormat::Csv));
    write_text(out / "report.json", secp::emit_table(report, secp::TableFormat::Json));
    write_text(out / "report.txt", secp::emit_table(report, secp::TableFormat::Text));
    std::cout << secp::emit_table(report, secp::TableFormat::Text);
  }
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  int fold = 0;
  int folds = 5;
  std::uint64_t seed = 0;
  std::string report;
};

void run_eval(const EvalArgs& a) {
  auto net = secp::network_from_checkpoint<float>(secp::load_checkpoint(a.checkpoint));
  auto samples = secp::load_dataset(a.data);
  auto split = secp::split_folds(secp::patient_ids(samples), a.folds, a.seed);
  std::vector<secp::Sample> test_set;
  for (const secp::Sample& s : samples)
    if (split.fold_of(s.patient_id) == a.fold) test_set.push_back(s);
  if (test_set.empty()) throw secp::ConfigError("fold " + std::to_string(a.fold) + " is empty");

  const std::string text = secp::fold_scores_json(evaluate(net, test_set), a.fold);
  if (a.report.empty())
    std::cout << text;
  else
    write_text(a.report, text);
}

struct AblateArgs {
  std::string data;
  std::string config;
  std::string out;
  int folds = 5;
};

void run_ablate(const AblateArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  auto samples = secp::load_dataset(a.data);
  auto split = secp::split_folds(secp::patient_ids(samples), a.folds, cfg.train.seed);

  struct Job {
    secp::VariantId variant;
    int fold;
  };
  std::vector<Job> jobs;
  for (secp::VariantId v : secp::kAllVariants)
    for (int fold = 0; fold < a.folds; ++fold) jobs.push_back({v, fold});

  struct JobResult {
    secp::FoldScores test_scores;
    double train_dice = 0;
  };
  std::vector<JobResult> results(jobs.size());

  // fold x variant jobs are independent; results merge by index so the
  // outcome does not depend on scheduling
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
      const Job& job = jobs[i];
      std::vector<secp::Sample> train_set, test_set;
      for (const secp::Sample& s : samples)
        (split.fold_of(s.patient_id) == job.fold ? test_set : train_set).push_back(s);
      secp::TrainConfig fold_cfg = cfg.train;
      fold_cfg.seed = secp::mix_seed(cfg.train.seed, static_cast<std::uint64_t>(job.variant) + 1,
                                     static_cast<std::uint64_t>(job.fold) + 1);
      auto trained = secp::staged_train<float>(job.variant, train_set, plan_for(job.variant, cfg),
                                               fold_cfg, cfg.network);
      results[i].test_scores = evaluate(trained.net, test_set);
      results[i].train_dice = mean_defined_dice(evaluate(trained.net, train_set));
    }
  };
  std::vector<std::thread> pool;
  const int workers = worker_count(jobs.size());
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();

  const fs::path out(a.out);
  fs::create_directories(out);
  std::vector<std::pair<std::string, secp::MetricsReport>> runs;
  json summary = json::array();
  for (std::size_t vi = 0; vi < std::size(secp::kAllVariants); ++vi) {
    const secp::VariantId v = secp::kAllVariants[vi];
    std::vector<secp::FoldScores> fold_scores;
    double train_dice = 0, test_dice = 0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].variant != v) continue;
      fold_scores.push_back(results[i].test_scores);
      train_dice += results[i].train_dice;
      test_dice += mean_defined_dice(results[i].test_scores);
    }
    train_dice /= a.folds;
    test_dice /= a.folds;
    runs.emplace_back(secp::variant_display(v), secp::aggregate_folds(fold_scores));
    summary.push_back({{"variant", secp::variant_key(v)},
                       {"mean_train_dice", train_dice},
                       {"mean_test_dice", test_dice}});
  }

  write_text(out / "ablation_dice.csv",
             secp::emit_comparison_table(runs, true, secp::TableFormat::Csv));
  write_text(out / "ablation_dice.txt",
             secp::emit_comparison_table(runs, true, secp::TableFormat::Text));
  write_text(out / "ablation_jaccard.csv",
             secp::emit_comparison_table(runs, false, secp::TableFormat::Csv));
  write_text(out / "ablation_jaccard.txt",
             secp::emit_comparison_table(runs, false, secp::TableFormat::Text));
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << secp::emit_comparison_table(runs, true, secp::TableFormat::Text);
}

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
};

void run_predict(const PredictArgs& a) {
  auto net = secp::network_from_checkpoint<float>(secp::load_checkpoint(a.checkpoint));
  auto image = secp::load_image_file(a.image);
  auto pred = secp::predict_mask(net, as_batch(image));
  secp::save_mask_file(a.out, mask_plane(pred, 0));
}

struct OverlayArgs {
  std::string checkpoint;
  std::string data;
  std::string sample;
  int organ = 0;  // 0: composite of all organs in label order
  std::string out;
};

void run_overlay(const OverlayArgs& a) {
  auto net = secp::network_from_checkpoint<float>(secp::load_checkpoint(a.checkpoint));
  auto samples = secp::load_dataset(a.data);
  const secp::Sample* sample = nullptr;
  for (const secp::Sample& s : samples)
    if (s.id == a.sample) sample = &s;
  if (!sample) throw secp::ConfigError("sample '" + a.sample + "' not found in " + a.data);

  auto pred = mask_plane(secp::predict_mask(net, as_batch(sample->image)), 0);
  secp::RgbImage img;
  if (a.organ > 0) {
    img = secp::overlay_render(sample->image, pred, sample->mask, {a.organ});
  } else {
    std::vector<int> organs;
    for (int o = 1; o < secp::kNumLabels; ++o) organs.push_back(o);
    img = secp::overlay_composite(sample->image, pred, sample->mask, organs);
  }
  secp::write_ppm(a.out, img);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SECP-Net organ-at-risk segmentation toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  gen_cmd->add_option("--seed", gen.seed, "RNG seed");
  gen_cmd->add_option("--patients", gen.patients, "Number of patients");
  gen_cmd->add_option("--slices", gen.slices, "Slices per patient");
  gen_cmd->add_option("--size", gen.size, "Image side length (multiple of 16)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Staged k-fold training of one variant");
  train_cmd->add_option("--variant", train.variant,
                        "baseline | baseline-concat | baseline-auto-concat | baseline-sec | "
                        "baseline-sec-concat | secp-net");
  train_cmd->add_option("--data", train.data, "Dataset manifest.json")->required();
  train_cmd->add_option("--folds", train.folds, "Number of folds");
  train_cmd->add_option("--config", train.config, "JSON train/network config");
  train_cmd->add_option("--out", train.out, "Output directory")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one fold");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "Dataset manifest.json")->required();
  eval_cmd->add_option("--fold", eval.fold, "Fold index to evaluate");
  eval_cmd->add_option("--folds", eval.folds, "Number of folds");
  eval_cmd->add_option("--seed", eval.seed, "Fold-split seed (the training seed)");
  eval_cmd->add_option("--report", eval.report, "Report path (stdout when omitted)");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run all six variants over all folds");
  ablate_cmd->add_option("--data", ablate.data, "Dataset manifest.json")->required();
  ablate_cmd->add_option("--config", ablate.config, "JSON train/network config");
  ablate_cmd->add_option("--folds", ablate.folds, "Number of folds");
  ablate_cmd->add_option("--out", ablate.out, "Output directory")->required();

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Segment one image file");
  predict_cmd->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("--image", predict.image, "Input image file")->required();
  predict_cmd->add_option("--out", predict.out, "Output mask file")->required();

  OverlayArgs overlay;
  auto* overlay_cmd = app.add_subcommand("overlay", "Render a prediction/ground-truth overlay");
  overlay_cmd->add_option("--checkpoint", overlay.checkpoint, "Checkpoint file")->required();
  overlay_cmd->add_option("--data", overlay.data, "Dataset manifest.json")->required();
  overlay_cmd->add_option("--sample", overlay.sample, "Sample id from the manifest")->required();
  overlay_cmd->add_option("--organ", overlay.organ, "Organ label (default: composite of all)");
  overlay_cmd->add_option("--out", overlay.out, "Output PPM path")->required();

  gen_cmd->callback([&]() { run_gen_data(gen); });
  train_cmd->callback([&]() { run_train(train); });
  eval_cmd->callback([&]() { run_eval(eval); });
  ablate_cmd->callback([&]() { run_ablate(ablate); });
  predict_cmd->callback([&]() { run_predict(predict); });
  overlay_cmd->callback([&]() { run_overlay(overlay); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const secp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
