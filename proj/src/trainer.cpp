#include "acg/trainer.hpp"

#include "acg/error.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <istream>
#include <ostream>
#include <thread>

namespace acg::trainer {

using corpus::TrainingExample;
using corpus::Vocabulary;
using decoder::DecoderStepOutput;
using decoder::StepGradient;
using num::Tag;
using num::Vec;

std::string_view loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::kCopy: return "copy";
    case LossKind::kGenerate: return "generate";
    case LossKind::kSwitch: return "switch";
  }
  return "?";
}

namespace {

double generate_scale(int vocab_size, const LossConfig& c) {
  return c.scale_generate_by_vocab ? 1.0 / vocab_size : 1.0;
}

double copy_scale(const TrainingExample& ex, const LossConfig& c) {
  return c.scale_copy_by_source ? 1.0 / static_cast<double>(ex.context.length()) : 1.0;
}

bool generate_step_active(const TrainingExample& ex, std::size_t t, const LossConfig& c) {
  return !(c.mask_special_targets && ex.generator_targets[t] == Vocabulary::kOov);
}

// Copy-distribution indices the step is trained toward; empty when masked.
std::vector<std::size_t> copy_step_targets(const TrainingExample& ex, std::size_t t, const LossConfig& c) {
  if (!ex.copier_targets[t].empty()) return ex.copier_targets[t];
  if (c.mask_special_targets) return {};
  return {0};
}

void check_lengths(const TrainingExample& ex, std::span<const DecoderStepOutput> outputs) {
  if (outputs.size() != ex.target_length())
    throw std::invalid_argument("loss: decoder outputs do not cover the target sequence");
}

}  // namespace

StepLosses compute_losses(const TrainingExample& ex, std::span<const DecoderStepOutput> outputs, int vocab_size,
                          const LossConfig& config) {
  check_lengths(ex, outputs);
  StepLosses l;
  const double gs = generate_scale(vocab_size, config);
  const double cs = copy_scale(ex, config);
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    const auto& out = outputs[t];
    if (generate_step_active(ex, t, config)) l.generate -= gs * std::log(out.gen_dist[ex.generator_targets[t]]);
    if (!config.copy_head) continue;
    auto targets = copy_step_targets(ex, t, config);
    if (!targets.empty()) {
      double mass = 0.0;
      for (auto i : targets) mass += out.copy_dist[static_cast<Eigen::Index>(i)];
      l.copy -= cs * std::log(mass);
    }
    const double diff = out.p_copy - ex.switch_targets[t];
    l.switch_loss += diff * diff / static_cast<double>(outputs.size());
  }
  num::require_finite(l.generate, "loss_generate");
  num::require_finite(l.copy, "loss_copy");
  num::require_finite(l.switch_loss, "loss_switch");
  return l;
}

std::vector<StepGradient> loss_gradients(const TrainingExample& ex, std::span<const DecoderStepOutput> outputs,
                                         LossKind kind, int vocab_size, const LossConfig& config) {
  check_lengths(ex, outputs);
  std::vector<StepGradient> grads(outputs.size());
  const double T = static_cast<double>(outputs.size());
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    const auto& out = outputs[t];
    auto& g = grads[t];
    if (!config.copy_head && kind != LossKind::kGenerate) continue;
    switch (kind) {
      case LossKind::kGenerate: {
        if (!generate_step_active(ex, t, config)) break;
        g.d_gen_logits = generate_scale(vocab_size, config) * out.gen_dist;
        g.d_gen_logits[ex.generator_targets[t]] -= generate_scale(vocab_size, config);
        break;
      }
      case LossKind::kCopy: {
        auto targets = copy_step_targets(ex, t, config);
        if (targets.empty()) break;
        const double cs = copy_scale(ex, config);
        double mass = 0.0;
        for (auto i : targets) mass += out.copy_dist[static_cast<Eigen::Index>(i)];
        g.d_copy_logits = cs * out.copy_dist;
        for (auto i : targets) {
          const auto k = static_cast<Eigen::Index>(i);
          g.d_copy_logits[k] -= cs * out.copy_dist[k] / mass;
        }
        break;
      }
      case LossKind::kSwitch: {
        const double p = out.p_copy;
        g.d_switch_logit = 2.0 * (p - ex.switch_targets[t]) * p * (1.0 - p) / T;
        break;
      }
    }
  }
  return grads;
}

StageSchedule default_schedule() {
  return {{
      {LossKind::kCopy, {Tag::kSwitch, Tag::kGenerator}},
      {LossKind::kGenerate, {Tag::kSwitch, Tag::kCopier}},
      {LossKind::kSwitch, {Tag::kCopier, Tag::kGenerator}},
  }};
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto as_int = [&] {
    try {
      std::size_t pos;
      long v = std::stol(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return static_cast<int>(v);
    } catch (const std::logic_error&) {
      throw FormatError("config key '" + key + "' expects an integer, got '" + value + "'");
    }
  };
  auto as_double = [&] {
    try {
      std::size_t pos;
      double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::logic_error&) {
      throw FormatError("config key '" + key + "' expects a number, got '" + value + "'");
    }
  };
  auto as_bool = [&] {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw FormatError("config key '" + key + "' expects a boolean, got '" + value + "'");
  };
  if (key == "embed_dim") model.embed_dim = as_int();
  else if (key == "word_hidden") model.word_hidden = as_int();
  else if (key == "query_hidden") model.query_hidden = as_int();
  else if (key == "decoder_hidden") model.decoder_hidden = as_int();
  else if (key == "hidden") model.word_hidden = model.query_hidden = model.decoder_hidden = as_int();
  else if (key == "scorer_hidden") model.scorer_hidden = as_int();
  else if (key == "use_copy") model.use_copy = as_bool();
  else if (key == "use_query_attention") model.use_query_attention = as_bool();
  else if (key == "query_summary_mlp") model.query_summary_mlp = as_bool();
  else if (key == "dropout") model.dropout = as_double();
  else if (key == "lr" || key == "learning_rate") adam.learning_rate = as_double();
  else if (key == "beta1") adam.beta1 = as_double();
  else if (key == "beta2") adam.beta2 = as_double();
  else if (key == "epsilon") adam.epsilon = as_double();
  else if (key == "batch_size" || key == "batch") batch_size = as_int();
  else if (key == "max_steps" || key == "steps") max_steps = as_int();
  else if (key == "clip_norm") clip_norm = as_double();
  else if (key == "stage_copy") stage_enabled[0] = as_bool();
  else if (key == "stage_generate") stage_enabled[1] = as_bool();
  else if (key == "stage_switch") stage_enabled[2] = as_bool();
  else if (key == "max_context_tokens") max_context_tokens = static_cast<std::size_t>(as_int());
  else if (key == "eval_every") eval_every = as_int();
  else if (key == "patience") patience = as_int();
  else if (key == "checkpoint_every") checkpoint_every = as_int();
  else if (key == "checkpoint_dir") checkpoint_dir = value;
  else if (key == "threads") threads = as_int();
  else if (key == "seed") seed = static_cast<std::uint64_t>(as_int());
  else if (key == "beam_size" || key == "beam") beam_size = as_int();
  else if (key == "vocab_size") vocab_size = as_int();
  else if (key == "scale_generate_by_vocab") loss.scale_generate_by_vocab = as_bool();
  else if (key == "scale_copy_by_source") loss.scale_copy_by_source = as_bool();
  else if (key == "mask_special_targets") loss.mask_special_targets = as_bool();
  else throw FormatError("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

double mixture_nll(const Model& model, const Vocabulary& vocab, std::span<const TrainingExample> examples) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    corpus::Query candidate(ex.target_tokens.begin(), ex.target_tokens.end() - 1);
    auto score = decoder::score_query(model, vocab, ex.context, candidate);
    total -= score.log_prob;
    tokens += score.step_probs.size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

StagedUpdater::StagedUpdater(const Model& model, const TrainConfig& config)
    : config_(config), schedule_(default_schedule()) {
  config_.loss.copy_head = model.config.use_copy;
  for (auto& a : adam_) a = num::AdamState(model.store, config.adam);
}

StepLosses StagedUpdater::run_stage(Model& model, std::size_t stage,
                                    std::span<const TrainingExample* const> batch,
                                    std::span<const std::uint64_t> dropout_seeds) {
  const LossKind kind = schedule_[stage].loss;
  const int V = model.config.vocab_size;
  const int workers = std::max(1, std::min<int>(config_.threads, static_cast<int>(batch.size())));

  std::vector<num::Gradients> partial(static_cast<std::size_t>(workers), num::Gradients(model.store));
  std::vector<StepLosses> losses(static_cast<std::size_t>(workers));
  auto work = [&](int w) {
    const std::size_t begin = batch.size() * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
    const std::size_t end = batch.size() * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
    for (std::size_t i = begin; i < end; ++i) {
      const TrainingExample& ex = *batch[i];
      Rng dropout(dropout_seeds[i]);
      auto pass = decoder::teacher_force(model, ex.context, ex.decoder_inputs, &dropout);
      auto l = compute_losses(ex, pass.outputs, V, config_.loss);
      auto& acc = losses[static_cast<std::size_t>(w)];
      acc.copy += l.copy;
      acc.generate += l.generate;
      acc.switch_loss += l.switch_loss;
      auto step_grads = loss_gradients(ex, pass.outputs, kind, V, config_.loss);
      decoder::backward(model, pass, step_grads, partial[static_cast<std::size_t>(w)]);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  // Ordered reduction keeps results independent of thread scheduling.
  num::Gradients& total = partial[0];
  StepLosses sum = losses[0];
  for (std::size_t w = 1; w < partial.size(); ++w) {
    total += partial[w];
    sum.copy += losses[w].copy;
    sum.generate += losses[w].generate;
    sum.switch_loss += losses[w].switch_loss;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total *= inv;
  sum.copy *= inv;
  sum.generate *= inv;
  sum.switch_loss *= inv;
  if (config_.clip_norm > 0.0) num::clip_global_norm(total, config_.clip_norm);
  num::adam_update(model.store, total, adam_[stage], schedule_[stage].frozen);
  return sum;
}

StepLosses StagedUpdater::update(Model& model, std::span<const TrainingExample* const> batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("staged update: empty batch");
  std::vector<std::uint64_t> seeds(batch.size());
  for (auto& s : seeds) s = rng.engine()();

  StepLosses reported;
  for (std::size_t stage = 0; stage < schedule_.size(); ++stage) {
    const LossKind kind = schedule_[stage].loss;
    if (!config_.stage_enabled[stage]) continue;
    if (!model.config.use_copy && kind != LossKind::kGenerate) continue;
    StepLosses l = run_stage(model, stage, batch, seeds);
    switch (kind) {
      case LossKind::kCopy: reported.copy = l.copy; break;
      case LossKind::kGenerate: reported.generate = l.generate; break;
      case LossKind::kSwitch: reported.switch_loss = l.switch_loss; break;
    }
    if (on_stage) on_stage(stage, model);
  }
  return reported;
}

TrainResult train(std::span<const TrainingExample> train_set, std::span<const TrainingExample> valid_set,
                  const Vocabulary& vocab, const TrainConfig& config) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  mc.seed = config.seed;

  TrainResult result{Model(mc), {}, 0, -1.0};
  Model& model = result.model;
  StagedUpdater updater(model, config);
  Rng rng(config.seed);

  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);
  auto checkpoint_path = [&](const std::string& name) {
    return (std::filesystem::path(config.checkpoint_dir) / name).string();
  };

  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  std::vector<const TrainingExample*> batch;
  std::optional<num::ParameterStore> best;
  int stale = 0;

  for (int step = 1; step <= config.max_steps; ++step) {
    batch.clear();
    while (batch.size() < static_cast<std::size_t>(config.batch_size)) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      batch.push_back(&train_set[order[cursor++]]);
      if (batch.size() == train_set.size()) break;
    }
    LossRecord rec{step, updater.update(model, batch, rng), -1.0};
    result.steps = step;

    const bool eval_now = !valid_set.empty() && config.eval_every > 0 &&
                          (step % config.eval_every == 0 || step == config.max_steps);
    if (eval_now) {
      rec.val_nll = mixture_nll(model, vocab, valid_set);
      if (result.best_val_nll < 0.0 || rec.val_nll < result.best_val_nll) {
        result.best_val_nll = rec.val_nll;
        best = model.store;
        stale = 0;
        if (!config.checkpoint_dir.empty()) model.save(checkpoint_path("best.ckpt"));
      } else {
        ++stale;
      }
    }
    result.curve.push_back(rec);
    if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 && step % config.checkpoint_every == 0)
      model.save(checkpoint_path("step-" + std::to_string(step) + ".ckpt"));
    if (config.patience > 0 && stale >= config.patience) break;
  }
  if (best) model.store = *best;
  if (!config.checkpoint_dir.empty()) model.save(checkpoint_path("final.ckpt"));
  return result;
}

void write_loss_csv(std::ostream& out, std::span<const LossRecord> curve) {
  out << "step,loss_copy,loss_generate,loss_switch,val_nll\n";
  out.precision(10);
  for (const auto& r : curve) {
    out << r.step << ',' << r.losses.copy << ',' << r.losses.generate << ',' << r.losses.switch_loss << ',';
    if (r.val_nll >= 0.0) out << r.val_nll;
    out << '\n';
  }
}

}  // namespace acg::trainer
