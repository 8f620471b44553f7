#pragma once

// Two-stage training.
//
// Stage 1: recon + w_e * (token_H - zeta * codebook_H) [+ alpha * commitment].
// Stage 2: the decoder is widened with zero-initialized noise channels and a
// patch discriminator is trained alternately (one G step, one D step) with
// the GAN objective added to the generator loss with weight gamma.
//
// Arithmetic is double throughout; parameters are rounded to float32 after
// every update so checkpoints (float32) hold exactly the trained weights.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gqtok/autodiff.hpp"
#include "gqtok/checkpoint.hpp"
#include "gqtok/entropy.hpp"
#include "gqtok/model.hpp"

namespace gqtok {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a loss becomes non-finite; carries the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& detail);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct TrainConfig {
  int stage = 1;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t steps = 200;

  double recon_weight = 1.0;
  double entropy_weight = 0.1;
  double zeta = 1.0;
  double gan_weight = 0.1;
  double commitment_weight = 0.0;
  bool non_saturating = false;
  double tau = 1.0;

  std::uint64_t seed = 0;
  bool ema = false;
  double ema_decay = 0.999;

  // Architecture.
  std::size_t image_size = 16;
  std::size_t image_channels = 3;
  std::size_t base_channels = 16;
  std::vector<std::size_t> channel_mult{1, 2};
  std::size_t n_res_blocks = 1;
  std::size_t downsample = 4;
  std::size_t groups = 2;
  std::size_t group_channels = 4;
  std::size_t noise_channels = 0;  // 0 means d = groups * group_channels
  // Unbounded latents let token-entropy minimization inflate |u| without limit.
  PreActivation pre_activation = PreActivation::Tanh;
  std::size_t disc_base_channels = 16;
  std::size_t disc_layers = 3;

  // Data.
  std::size_t dataset_size = 8;
  std::uint64_t data_seed = 0;

  // Stage 2 starting point (used by the command-line front end).
  std::string init_checkpoint;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  std::size_t latent_channels() const noexcept { return groups * group_channels; }
  std::size_t resolved_noise_channels() const noexcept {
    return noise_channels == 0 ? latent_channels() : noise_channels;
  }

  /// Applies one `key = value` assignment. Throws ConfigError on unknown keys
  /// or unparsable values.
  void set(std::string_view key, std::string_view value);

  /// UTF-8 `key = value` lines; `#` starts a comment.
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::string& path);
  /// Every field, one per line, in a fixed order; parse(to_text()) == *this.
  std::string to_text() const;

  bool operator==(const TrainConfig&) const = default;
};

TokenizerSpec tokenizer_spec(const TrainConfig& cfg);
DiscriminatorSpec discriminator_spec(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Loss terms

/// mean((recon - images)^2).
ad::Var reconstruction_loss(ad::Var recon, const Tensor& images);
/// mean((grouped - stop_gradient(signs))^2).
ad::Var commitment_loss(ad::Var grouped, const Tensor& signs);
/// mean(log(1 - D(fake))) as written, or mean(-log D(fake)) when non-saturating.
ad::Var generator_adversarial_loss(ad::Var fake_logits, bool non_saturating);
/// mean(-log D(real)) + mean(-log(1 - D(fake))), the negated discriminator objective.
ad::Var discriminator_adversarial_loss(ad::Var real_logits, ad::Var fake_logits);

struct GeneratorTerms {
  Tokenizer::Forward forward;
  ad::Var recon;
  ad::Var token_h;
  ad::Var codebook_h;
  ad::Var commitment;
  std::optional<ad::Var> gan_g;
  ad::Var total;
};

/// Builds the generator objective on `tape`. `disc` (frozen) enables the GAN
/// term; `noise` feeds the generative decoder.
GeneratorTerms generator_loss(ad::Tape& tape, Tokenizer& tok, const Discriminator* disc, const Tensor& images,
                              const Tensor* noise, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Optimization

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  /// One update from each parameter's grad. Parameters must be passed in the
  /// same order every call.
  void step(std::span<ad::Parameter* const> params);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// shadow <- decay * shadow + (1 - decay) * weights. decay in [0, 1].
void ema_update(std::span<double> shadow, std::span<const double> weights, double decay);

/// Rounds every value to the nearest float32.
void round_to_float32(Tensor& t);

// ---------------------------------------------------------------------------
// Reports

/// Per-group fraction of the 2^d' codes that occur at least once.
std::vector<double> codebook_usage(std::span<const TokenGrid> grids);
double mean_usage(std::span<const double> usage);

struct StepReport {
  std::size_t step = 0;
  double recon = 0.0;
  double token_h = 0.0;
  double codebook_h = 0.0;
  double gan_g = 0.0;
  double gan_d = 0.0;
  double commitment = 0.0;
  double total = 0.0;
  std::vector<double> usage;
  double usage_mean = 0.0;

  bool operator==(const StepReport&) const = default;
};

/// Header plus one row per report. Columns: step, recon, token_h, codebook_h,
/// gan_g, gan_d, total, usage_mean, commitment.
void write_loss_csv(std::ostream& out, std::span<const StepReport> reports);
std::string loss_csv_header();
std::string loss_csv_row(const StepReport& r);

// ---------------------------------------------------------------------------
// Training runs

struct TrainRun {
  TrainConfig config;
  std::unique_ptr<Tokenizer> tokenizer;
  std::unique_ptr<Discriminator> discriminator;  // stage 2 only
  std::vector<Tensor> ema_shadow;                // tokenizer parameters, encoder then decoder
  std::vector<StepReport> reports;

  Checkpoint checkpoint() const;
};

using StepCallback = std::function<void(const StepReport&)>;

/// Freshly initialized tokenizer for `cfg` (float32-rounded), i.e. the step-0
/// model of train_stage1.
std::unique_ptr<Tokenizer> initial_tokenizer(const TrainConfig& cfg);

/// Deterministic batches: step s uses images (s * B + b) mod N.
std::vector<std::size_t> batch_indices(std::size_t step, std::size_t batch_size, std::size_t dataset_size);

TrainRun train_stage1(const TrainConfig& cfg, const std::vector<Tensor>& data, const StepCallback& on_step = {});

/// Loads the stage-1 tokenizer from `stage1`, widens the decoder and trains
/// with the GAN objective. Architecture fields come from the checkpoint.
TrainRun train_stage2(const TrainConfig& cfg, const Checkpoint& stage1, const std::vector<Tensor>& data,
                      const StepCallback& on_step = {});

/// Model restored from a checkpoint.
struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<Tokenizer> tokenizer;
  std::unique_ptr<Discriminator> discriminator;
};

/// `use_ema` swaps in the "ema." shadow weights when the checkpoint has them.
LoadedModel load_model(const Checkpoint& ckpt, bool use_ema = false);

}  // namespace gqtok
