#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "secp/checkpoint.hpp"
#include "secp/data.hpp"
#include "secp/network.hpp"

namespace secp {

struct TrainConfig {
  double lr0 = 0.01;
  double dr = 0.1;
  int epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double momentum = 0.0;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.lr0 <= 0 || cfg.dr < 0 || cfg.epochs < 1 || cfg.batch_size < 1) {
    throw ConfigError("train config: need lr0 > 0, dr >= 0, epochs >= 1, batch_size >= 1");
  }
}

/// Inverse-time decay: lr0 / (1 + dr * epoch), epoch counted from 0.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 / (1.0 + cfg.dr * epoch);
}

// The cascade training curriculum: pretrain a plain backbone, re-train with
// the SEC pyramid from those weights, train the secondary with the primary
// frozen, then fine-tune everything. Non-cascades use the first two stages.
enum class Stage : std::uint8_t {
  PretrainBackbone = 0,
  AddSECAndTune = 1,
  TrainSecondaryFrozenPrimary = 2,
  FinetuneAll = 3,
};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::PretrainBackbone: return "pretrain-backbone";
    case Stage::AddSECAndTune: return "add-sec-and-tune";
    case Stage::TrainSecondaryFrozenPrimary: return "train-secondary-frozen-primary";
    case Stage::FinetuneAll: return "finetune-all";
  }
  throw InternalError("unknown stage");
}

/// Per-stage epoch budgets, in stage order. Two entries for standalone
/// variants, four for cascades.
struct StagePlan {
  std::vector<int> stage_epochs;

  int num_stages() const { return static_cast<int>(stage_epochs.size()); }
};

inline StagePlan default_plan(VariantId variant, int epochs_per_stage) {
  StagePlan plan;
  plan.stage_epochs.assign(variant_is_cascade(variant) ? 4 : 2, epochs_per_stage);
  return plan;
}

struct EpochEntry {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  double seconds = 0;  // wall time; excluded from determinism comparisons
};

/// One row per epoch. CSV columns: epoch,lr,loss,seconds.
struct TrainingLog {
  std::vector<EpochEntry> epochs;

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,lr,loss,seconds\n";
    os.precision(10);
    for (const EpochEntry& e : epochs)
      os << e.epoch << "," << e.lr << "," << e.loss << "," << e.seconds << "\n";
    return os.str();
  }
};

/// True when the deterministic columns (epoch, lr, loss) agree bitwise.
inline bool same_schedule(const TrainingLog& a, const TrainingLog& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    if (a.epochs[i].epoch != b.epochs[i].epoch || a.epochs[i].lr != b.epochs[i].lr ||
        a.epochs[i].loss != b.epochs[i].loss)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Plain SGD update p <- p - lr*g on every unfrozen parameter; gradients are
/// cleared afterwards. Frozen parameters must stay bitwise untouched.
template <typename S>
void sgd_step(std::span<Parameter<S>* const> params, double lr) {
  for (Parameter<S>* p : params) {
    if (p->frozen) continue;
    if (!p->tensor.has_grad()) {
      throw InternalError("parameter '" + p->name + "' has no gradient before sgd_step");
    }
    auto vals = p->tensor.data();
    auto grads = p->tensor.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= static_cast<S>(lr) * grads[i];
    p->tensor.zero_grad();
  }
}

/// SGD with optional momentum (velocity buffers keyed by parameter name).
template <typename S>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double momentum = 0.0) : momentum_(momentum) {}

  void step(std::span<Parameter<S>* const> params, double lr) {
    if (momentum_ == 0.0) {
      sgd_step(params, lr);
      return;
    }
    for (Parameter<S>* p : params) {
      if (p->frozen) continue;
      if (!p->tensor.has_grad()) {
        throw InternalError("parameter '" + p->name + "' has no gradient before sgd_step");
      }
      auto& vel = velocity_[p->name];
      if (vel.empty()) vel.assign(p->tensor.size(), S(0));
      auto vals = p->tensor.data();
      auto grads = p->tensor.grad();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vel[i] = static_cast<S>(momentum_) * vel[i] + grads[i];
        vals[i] -= static_cast<S>(lr) * vel[i];
      }
      p->tensor.zero_grad();
    }
  }

 private:
  double momentum_;
  std::map<std::string, std::vector<S>> velocity_;
};

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

template <typename S>
struct Batch {
  Tensor<S> images;  // [B,1,H,W]
  Mask masks;        // [B,H,W]
};

template <typename S>
Batch<S> make_batch(const std::vector<Sample>& data, std::span<const int> indices) {
  if (indices.empty()) throw UsageError("make_batch: empty index list");
  const Sample& first = data[static_cast<std::size_t>(indices[0])];
  const int H = first.image.dim(1), W = first.image.dim(2);
  const int B = static_cast<int>(indices.size());
  Batch<S> b{Tensor<S>::zeros({B, 1, H, W}), Mask({B, H, W})};
  auto img = b.images.data();
  for (int i = 0; i < B; ++i) {
    const Sample& s = data[static_cast<std::size_t>(indices[i])];
    if (s.image.shape() != Shape{1, H, W}) {
      throw ConfigError("batch mixes image sizes: " + shape_str(s.image.shape()) + " vs [1," +
                        std::to_string(H) + "," + std::to_string(W) + "]");
    }
    for (std::size_t j = 0; j < s.image.size(); ++j)
      img[static_cast<std::size_t>(i) * s.image.size() + j] = static_cast<S>(s.image.data()[j]);
    std::copy(s.mask.v.begin(), s.mask.v.end(), b.masks.v.begin() + static_cast<std::ptrdiff_t>(i) * s.mask.size());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// One stage of training on the given network. Shuffles per epoch with a
/// seeded RNG; loss is mean multi-class cross-entropy on the final logits.
/// PretrainBackbone stops early once the epoch loss improves by less than
/// 1e-4 for 10 consecutive epochs. A non-finite loss aborts with epoch,
/// batch and lr diagnostics.
template <typename S>
TrainingLog train_stage(Network<S>& net, const std::vector<Sample>& data, const TrainConfig& cfg,
                        Stage stage, int stage_epochs) {
  validate(cfg);
  if (data.empty()) throw ConfigError("train_stage: empty dataset");
  if (stage_epochs < 1) throw ConfigError("train_stage: need at least one epoch");

  auto params = parameters(net);
  SgdOptimizer<S> opt(cfg.momentum);
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(stage) + 1));

  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  TrainingLog log;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < stage_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t pixel_count = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      auto batch = make_batch<S>(data, std::span<const int>(order).subspan(begin, end - begin));
      auto logits = forward(net, batch.images).final_logits;
      auto loss = softmax_cross_entropy(logits, batch.masks);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(begin / cfg.batch_size) + ", lr " + std::to_string(lr));
      }
      loss.backward();
      opt.step(std::span<Parameter<S>* const>(params), lr);
      const std::size_t px = batch.masks.size();
      loss_sum += value * static_cast<double>(px);
      pixel_count += px;
    }
    const double epoch_loss = loss_sum / static_cast<double>(pixel_count);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back({epoch, lr, epoch_loss, secs});

    if (stage == Stage::PretrainBackbone) {
      if (best - epoch_loss < 1e-4)
        ++stale;
      else
        stale = 0;
      best = std::min(best, epoch_loss);
      if (stale >= 10) break;
    }
  }
  return log;
}

template <typename S>
struct StageOutcome {
  Stage stage = Stage::PretrainBackbone;
  Checkpoint checkpoint;
  TrainingLog log;
};

template <typename S>
struct StagedResult {
  Network<S> net;
  std::vector<StageOutcome<S>> stages;
};

namespace detail {

template <typename S>
void freeze_prefix(Network<S>& net, const std::string& prefix, bool frozen) {
  for (Parameter<S>* p : parameters(net))
    if (p->name.rfind(prefix, 0) == 0) set_frozen(*p, frozen);
}

}  // namespace detail

/// Runs the staged curriculum for a variant: pretrain a plain backbone,
/// rebuild with SEC initialized from those weights and tune, then for
/// cascades train the secondary over a frozen primary and fine-tune the
/// whole net. Emits a checkpoint after every stage.
template <typename S>
StagedResult<S> staged_train(VariantId variant, const std::vector<Sample>& data,
                             const StagePlan& plan, const TrainConfig& cfg,
                             const NetworkConfig& netcfg) {
  const int expected = variant_is_cascade(variant) ? 4 : 2;
  if (plan.num_stages() != expected) {
    throw ConfigError(std::string("stage plan has ") + std::to_string(plan.num_stages()) +
                      " stages but variant '" + variant_key(variant) + "' needs " +
                      std::to_string(expected));
  }

  StagedResult<S> result;

  // stage 1: plain backbone
  Network<S> backbone = build_variant<S>(VariantId::Baseline, netcfg, cfg.seed);
  {
    StageOutcome<S> out;
    out.stage = Stage::PretrainBackbone;
    out.log = train_stage(backbone, data, cfg, Stage::PretrainBackbone, plan.stage_epochs[0]);
    out.checkpoint = to_checkpoint(backbone);
    result.stages.push_back(std::move(out));
  }

  // stage 2: primary variant, shared layers initialized from stage 1 finals
  Network<S> primary = build_variant<S>(variant_primary(variant), netcfg, cfg.seed + 1);
  copy_matching_params(primary, backbone);
  {
    StageOutcome<S> out;
    out.stage = Stage::AddSECAndTune;
    out.log = train_stage(primary, data, cfg, Stage::AddSECAndTune, plan.stage_epochs[1]);
    out.checkpoint = to_checkpoint(primary);
    result.stages.push_back(std::move(out));
  }

  if (!variant_is_cascade(variant)) {
    result.net = std::move(primary);
    return result;
  }

  // stage 3: full cascade, primary frozen
  Network<S> cascade = build_variant<S>(variant, netcfg, cfg.seed + 2);
  copy_matching_params(cascade, primary);
  detail::freeze_prefix(cascade, "primary.", true);
  {
    StageOutcome<S> out;
    out.stage = Stage::TrainSecondaryFrozenPrimary;
    out.log = train_stage(cascade, data, cfg, Stage::TrainSecondaryFrozenPrimary,
                          plan.stage_epochs[2]);
    out.checkpoint = to_checkpoint(cascade);
    result.stages.push_back(std::move(out));
  }

  // stage 4: everything trainable
  detail::freeze_prefix(cascade, "primary.", false);
  {
    StageOutcome<S> out;
    out.stage = Stage::FinetuneAll;
    out.log = train_stage(cascade, data, cfg, Stage::FinetuneAll, plan.stage_epochs[3]);
    out.checkpoint = to_checkpoint(cascade);
    result.stages.push_back(std::move(out));
  }
  result.net = std::move(cascade);
  return result;
}

}  // namespace secp
