#pragma once

// Three losses (generator cross entropy, copier cross entropy marginalized
// over matching positions, squared switch error) and the staged update loop
// that applies each loss in its own pass with designated components frozen.

#include "acg/corpus.hpp"
#include "acg/decoder.hpp"
#include "acg/model.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace acg::trainer {

enum class LossKind { kCopy, kGenerate, kSwitch };
std::string_view loss_name(LossKind kind);

struct LossConfig {
  bool scale_generate_by_vocab = true;  // 1/|V|
  bool scale_copy_by_source = true;     // 1/|X|
  // Drop <oov>-target steps from loss_generate and <unk>-target steps from loss_copy.
  bool mask_special_targets = true;
  // Off for the generator-only ablation: loss_copy and loss_switch are then 0.
  bool copy_head = true;
};

struct StepLosses {
  double generate = 0.0;
  double copy = 0.0;
  double switch_loss = 0.0;
};

StepLosses compute_losses(const corpus::TrainingExample& example,
                          std::span<const decoder::DecoderStepOutput> outputs, int vocab_size,
                          const LossConfig& config);

// Per-step upstream gradients of one loss w.r.t. the decoder's logits.
std::vector<decoder::StepGradient> loss_gradients(const corpus::TrainingExample& example,
                                                  std::span<const decoder::DecoderStepOutput> outputs,
                                                  LossKind kind, int vocab_size, const LossConfig& config);

struct Stage {
  LossKind loss;
  num::TagSet frozen;
};
using StageSchedule = std::array<Stage, 3>;

// copy with {switch, generator} frozen; generate with {switch, copier}
// frozen; switch with {copier, generator} frozen.
StageSchedule default_schedule();

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  num::AdamConfig adam;
  int batch_size = 128;
  int max_steps = 1000;
  double clip_norm = 5.0;
  std::array<bool, 3> stage_enabled = {true, true, true};
  std::size_t max_context_tokens = 50;
  int eval_every = 100;
  int patience = 5;  // evaluations without improvement before stopping; 0 disables
  int checkpoint_every = 0;
  std::string checkpoint_dir;
  int threads = 1;
  std::uint64_t seed = 1;
  int beam_size = 4;
  int vocab_size = 90000;

  // Flat `key = value` text; unknown keys are rejected.
  static TrainConfig parse(std::istream& in);
  void set(const std::string& key, const std::string& value);
};

// Average per-token negative log of the fused step probability over the
// examples' targets (including each terminating </q>).
double mixture_nll(const Model& model, const corpus::Vocabulary& vocab,
                   std::span<const corpus::TrainingExample> examples);

// Holds one Adam state per stage.
class StagedUpdater {
 public:
  StagedUpdater(const Model& model, const TrainConfig& config);

  // Three sequential forward/backward/update passes over the batch.
  StepLosses update(Model& model, std::span<const corpus::TrainingExample* const> batch, Rng& rng);

  // Called after each stage's update with the stage index (testing hook).
  std::function<void(std::size_t stage, const Model&)> on_stage;

 private:
  StepLosses run_stage(Model& model, std::size_t stage, std::span<const corpus::TrainingExample* const> batch,
                       std::span<const std::uint64_t> dropout_seeds);

  TrainConfig config_;
  StageSchedule schedule_;
  std::array<num::AdamState, 3> adam_;
};

struct LossRecord {
  int step = 0;
  StepLosses losses;
  double val_nll = -1.0;  // negative when not evaluated at this step
};

struct TrainResult {
  Model model;
  std::vector<LossRecord> curve;
  int steps = 0;
  double best_val_nll = -1.0;
};

TrainResult train(std::span<const corpus::TrainingExample> train_set,
                  std::span<const corpus::TrainingExample> valid_set, const corpus::Vocabulary& vocab,
                  const TrainConfig& config);

void write_loss_csv(std::ostream& out, std::span<const LossRecord> curve);

}  // namespace acg::trainer
