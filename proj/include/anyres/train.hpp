#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "anyres/checkpoint.hpp"
#include "anyres/datapipe.hpp"
#include "anyres/discriminator.hpp"
#include "anyres/generator.hpp"
#include "anyres/losses.hpp"
#include "anyres/nn.hpp"

namespace anyres {

/// Everything a training run depends on. Serialized as a flat JSON object;
/// unknown keys are rejected.
struct TrainConfig {
  int p = 64;
  int s_lo = 0;  // 0 means p
  int s_hi = 0;  // 0 means unbounded
  double lambda_r1 = 1.0;
  double lambda_teacher = 5.0;
  double global_prob = 0.5;
  int batch_size = 8;
  double lr_g = 2.5e-3;
  double lr_d = 2.5e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  int steps_phase1 = 1000;
  int steps_phase2 = 1000;
  std::uint64_t seed = 0;
  double w_l1 = 1.0;
  double w_perc = 1.0;
  int r1_interval = 4;
  double ema_halflife = 0.0;  // in G steps; 0 keeps no weight average

  // generator
  int z_dim = 64;
  int fourier_channels = 64;
  double fourier_bandwidth = 8.0;
  int g_layers = 6;
  int g_channels = 128;
  int mapping_layers = 2;
  int mapping_width = 64;
  std::string kernel = "1x1";
  int s_max = 0;  // 0: largest training scale the manifest allows

  // discriminator
  int d_base_channels = 16;
  int d_max_channels = 64;

  // proxy metric and perceptual term
  int embed_size = 64;
  int embed_features = 64;
  std::uint64_t embed_seed = 1234;
  int proxy_n = 128;
  std::uint64_t perceptual_seed = 7;

  // logging
  int log_every = 50;
  int proxy_every = 0;  // 0: only at the start and the end of a phase
  int checkpoint_every = 500;
  int sample_every = 500;

  // paths (not part of the config hash)
  std::string manifest;
  std::string out_dir;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;

  GeneratorConfig generator_config(int resolved_s_max) const;
  DiscriminatorConfig discriminator_config() const;
  SamplingPolicy sampling_policy() const;
};

std::string config_to_json(const TrainConfig& config);
/// Parses a flat JSON object. Missing keys keep their defaults; unknown keys
/// and wrong types raise FormatError.
TrainConfig config_from_json(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
/// FNV-1a of the canonical JSON without the path fields.
std::uint64_t config_hash(const TrainConfig& config);

/// Generator s_max for a manifest: config.s_max if set, otherwise the largest
/// scale the patch sampler can draw (at least 2p).
int resolve_s_max(const TrainConfig& config, const Manifest& manifest);

struct TrainState {
  int phase = 1;
  std::int64_t step = 0;
  Generator g;
  Discriminator d;
  std::optional<Generator> teacher;  // phase 2 only, frozen
  std::uint64_t teacher_hash = 0;
  nn::Adam opt_g;
  nn::Adam opt_d;
  double last_r1 = 0.0;
  std::optional<Generator> ema;  // exponential moving average of g, when enabled

  /// The generator used for samples, metrics, the teacher and the CLI.
  const Generator& output() const { return ema ? *ema : g; }
};

TrainState init_phase1(const TrainConfig& config, int resolved_s_max);
/// Phase-2 start from a finished phase-1 state: G and D are carried over, the
/// scale branch is switched on, a frozen teacher copy of G is taken and the
/// optimizers start afresh. With a weight average, its weights seed both G
/// and the teacher.
TrainState init_phase2(const TrainState& phase1, const TrainConfig& config);

Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& config);
TrainState state_from_checkpoint(const Checkpoint& ck);

struct StepStats {
  double loss_d = 0.0;
  double loss_g = 0.0;
  double r1 = 0.0;  // mean penalty of the latest regularized D step
  bool r1_applied = false;
  double teacher = 0.0;  // mean teacher loss (unweighted)
};

/// Shared, read-only inputs of the training steps.
struct TrainContext {
  TrainContext(const TrainConfig& config, const Manifest& manifest, ImageCache& cache, int phase);

  const TrainConfig& config;
  const Manifest& manifest;
  ImageCache& cache;
  PatchSampler sampler;
  RandomConvPerceptual perceptual;
  int phase;
};

/// Real batch for `step`: sample i comes from sub-stream (phase real, step * B + i).
std::vector<PatchBatchItem> draw_real_batch(const TrainContext& ctx, std::int64_t step);

/// One D step (lazy R1 every r1_interval steps, scaled by the interval) and
/// one G step on global views.
StepStats pretrain_step(TrainState& state, const TrainContext& ctx, std::span<const PatchBatchItem> real);
/// One D step on real vs fake patches at the real batch's specs, then one G
/// step on freshly drawn specs with the adversarial and teacher terms.
StepStats patch_train_step(TrainState& state, const TrainContext& ctx, std::span<const PatchBatchItem> real);

/// Mean absolute difference between the global views of g and teacher over
/// n latents.
double teacher_drift(const Generator& g, const Generator& teacher, int n, std::uint64_t seed);

struct MetricRow {
  std::int64_t step = 0;
  std::optional<double> loss_d, loss_g, r1, teacher, proxy_pfid;
  double wallclock = 0.0;
};

inline constexpr const char* kMetricHeader = "step,loss_D,loss_G,r1,teacher,proxy_pfid,wallclock";
std::string format_metric_row(const MetricRow& row);

struct RunOptions {
  int phase = 1;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> init_checkpoint;  // phase 2
  std::optional<std::filesystem::path> resume;
  bool verbose = true;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::vector<MetricRow> rows;  // rows written by this invocation
  std::optional<double> proxy_start, proxy_end, proxy_baseline;
};

/// Runs one phase, writing config.json, provenance.json, metrics.csv,
/// checkpoints/ and samples/ under out_dir. Resuming truncates the metric log
/// to the checkpoint's step and continues with the same sub-streams.
RunResult run_phase(const TrainConfig& config, const Manifest& manifest, const RunOptions& options);

/// Build-time code version (git HEAD when available).
std::string code_version();

}  // namespace anyres
