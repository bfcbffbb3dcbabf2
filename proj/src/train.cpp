#include "anyres/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "anyres/errors.hpp"
#include "anyres/eval.hpp"
#include "anyres/raster.hpp"
#include "anyres/rng.hpp"

#ifndef ANYRES_CODE_VERSION
#define ANYRES_CODE_VERSION "unknown"
#endif

namespace anyres {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string code_version() { return ANYRES_CODE_VERSION; }

// ---- config ---------------------------------------------------------------------------

#define ANYRES_TRAIN_FIELDS(X)                                                                     \
  X(p) X(s_lo) X(s_hi) X(lambda_r1) X(lambda_teacher) X(global_prob) X(batch_size) X(lr_g) X(lr_d) \
  X(beta1) X(beta2) X(steps_phase1) X(steps_phase2) X(seed) X(w_l1) X(w_perc) X(r1_interval)       \
  X(ema_halflife)                                                                                  \
  X(z_dim) X(fourier_channels) X(fourier_bandwidth) X(g_layers) X(g_channels) X(mapping_layers)    \
  X(mapping_width) X(kernel) X(s_max) X(d_base_channels) X(d_max_channels) X(embed_size)          \
  X(embed_features) X(embed_seed) X(proxy_n) X(perceptual_seed) X(log_every) X(proxy_every)        \
  X(checkpoint_every) X(sample_every)

#define ANYRES_PATH_FIELDS(X) X(manifest) X(out_dir)

namespace {

void read_field(const nlohmann::json& v, const std::string& key, int& out) {
  if (!v.is_number_integer()) throw FormatError("config key '" + key + "' must be an integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) throw FormatError("config key '" + key + "' is out of range");
  out = static_cast<int>(x);
}

void read_field(const nlohmann::json& v, const std::string& key, double& out) {
  if (!v.is_number()) throw FormatError("config key '" + key + "' must be a number");
  out = v.get<double>();
}

void read_field(const nlohmann::json& v, const std::string& key, std::uint64_t& out) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw FormatError("config key '" + key + "' must be a non-negative integer");
  }
  out = v.get<std::uint64_t>();
}

void read_field(const nlohmann::json& v, const std::string& key, std::string& out) {
  if (!v.is_string()) throw FormatError("config key '" + key + "' must be a string");
  out = v.get<std::string>();
}

json to_json_object(const TrainConfig& c, bool with_paths) {
  json j;
#define X(name) j[#name] = c.name;
  ANYRES_TRAIN_FIELDS(X)
  if (with_paths) {
    ANYRES_PATH_FIELDS(X)
  }
#undef X
  return j;
}

}  // namespace

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid config: " + what);
  };
  need(p >= 8 && p % 4 == 0, "p must be a multiple of 4 and at least 8");
  need(s_lo == 0 || s_lo >= p, "s_lo must be 0 or >= p");
  need(s_hi == 0 || s_hi >= std::max(s_lo, p), "s_hi must be 0 or >= max(s_lo, p)");
  need(lambda_r1 >= 0.0, "lambda_r1 must be >= 0");
  need(lambda_teacher >= 0.0, "lambda_teacher must be >= 0");
  need(global_prob >= 0.0 && global_prob <= 1.0, "global_prob must lie in [0, 1]");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(lr_g > 0.0 && lr_d > 0.0, "learning rates must be positive");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  need(steps_phase1 >= 0 && steps_phase2 >= 0, "step counts must be >= 0");
  need(w_l1 >= 0.0 && w_perc >= 0.0, "teacher weights must be >= 0");
  need(r1_interval >= 1, "r1_interval must be >= 1");
  need(ema_halflife >= 0.0, "ema_halflife must be >= 0");
  need(z_dim >= 1 && fourier_channels >= 1 && g_layers >= 1 && g_channels >= 1, "generator sizes must be positive");
  need(mapping_layers >= 1 && mapping_width >= 1, "mapping sizes must be positive");
  need(fourier_bandwidth > 0.0, "fourier_bandwidth must be positive");
  need(kernel == "1x1" || kernel == "3x3", "kernel must be \"1x1\" or \"3x3\"");
  need(s_max == 0 || s_max > p, "s_max must be 0 or > p");
  need(d_base_channels >= 1 && d_max_channels >= d_base_channels, "discriminator channels are invalid");
  need(embed_size >= 8 && embed_size % 4 == 0 && embed_features >= 1, "embedder sizes are invalid");
  need(proxy_n >= 2, "proxy_n must be >= 2");
  need(log_every >= 1, "log_every must be >= 1");
  need(proxy_every >= 0 && checkpoint_every >= 0 && sample_every >= 0, "intervals must be >= 0");
}

GeneratorConfig TrainConfig::generator_config(int resolved_s_max) const {
  GeneratorConfig g;
  g.p = p;
  g.z_dim = z_dim;
  g.fourier_channels = fourier_channels;
  g.fourier_bandwidth = fourier_bandwidth;
  g.layers = g_layers;
  g.channels = g_channels;
  g.mapping_layers = mapping_layers;
  g.mapping_width = mapping_width;
  g.kernel = kernel_from_string(kernel);
  g.s_max = resolved_s_max;
  g.seed = derive_seed(seed, "generator");
  return g;
}

DiscriminatorConfig TrainConfig::discriminator_config() const {
  DiscriminatorConfig d;
  d.p = p;
  d.base_channels = d_base_channels;
  d.max_channels = d_max_channels;
  d.seed = derive_seed(seed, "discriminator");
  return d;
}

SamplingPolicy TrainConfig::sampling_policy() const {
  SamplingPolicy s;
  s.p = p;
  s.s_lo = s_lo;
  s.s_hi = s_hi;
  s.global_prob = global_prob;
  return s;
}

std::string config_to_json(const TrainConfig& config) { return to_json_object(config, true).dump(2) + "\n"; }

TrainConfig config_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  TrainConfig c;
  std::map<std::string, std::function<void(const nlohmann::json&)>> setters;
#define X(name) setters[#name] = [&c](const nlohmann::json& v) { read_field(v, #name, c.name); };
  ANYRES_TRAIN_FIELDS(X)
  ANYRES_PATH_FIELDS(X)
#undef X
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw FormatError("unknown config key '" + key + "'");
    it->second(value);
  }
  return c;
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::uint64_t config_hash(const TrainConfig& config) { return fnv1a(to_json_object(config, false).dump()); }

int resolve_s_max(const TrainConfig& config, const Manifest& manifest) {
  if (config.s_max > 0) return config.s_max;
  int largest = 0;
  for (const auto* r : manifest.hr()) largest = std::max(largest, r->short_side());
  if (config.s_hi > 0) largest = std::min(largest, config.s_hi);
  return std::max(largest, 2 * config.p);
}

// ---- state -----------------------------------------------------------------------------

TrainState init_phase1(const TrainConfig& config, int resolved_s_max) {
  config.validate();
  Generator g(config.generator_config(resolved_s_max));
  Discriminator d(config.discriminator_config());
  nn::Adam opt_g(g.params(), config.lr_g, config.beta1, config.beta2);
  nn::Adam opt_d(d.params(), config.lr_d, config.beta1, config.beta2);
  TrainState st{1, 0, std::move(g), std::move(d), std::nullopt, 0, std::move(opt_g), std::move(opt_d), 0.0, std::nullopt};
  if (config.ema_halflife > 0.0) st.ema = st.g;
  return st;
}

TrainState init_phase2(const TrainState& phase1, const TrainConfig& config) {
  if (phase1.phase != 1) throw std::invalid_argument("patch training must start from a phase-1 state");
  const Generator& base = phase1.output();
  TrainState st{2, 0, base, phase1.d, base, 0, {}, {}, 0.0, std::nullopt};
  st.teacher->set_scale_branch_flag(false);
  st.g.enable_scale_branch();
  if (config.ema_halflife > 0.0) st.ema = st.g;
  st.teacher_hash = st.teacher->params().hash();
  st.opt_g = nn::Adam(st.g.params(), config.lr_g, config.beta1, config.beta2);
  st.opt_d = nn::Adam(st.d.params(), config.lr_d, config.beta1, config.beta2);
  return st;
}

namespace {

json generator_config_json(const GeneratorConfig& g) {
  json j;
  j["p"] = g.p;
  j["z_dim"] = g.z_dim;
  j["fourier_channels"] = g.fourier_channels;
  j["fourier_bandwidth"] = g.fourier_bandwidth;
  j["layers"] = g.layers;
  j["channels"] = g.channels;
  j["mapping_layers"] = g.mapping_layers;
  j["mapping_width"] = g.mapping_width;
  j["kernel"] = to_string(g.kernel);
  j["s_max"] = g.s_max;
  j["seed"] = g.seed;
  return j;
}

GeneratorConfig generator_config_from(const nlohmann::json& j) {
  GeneratorConfig g;
  g.p = j.at("p").get<int>();
  g.z_dim = j.at("z_dim").get<int>();
  g.fourier_channels = j.at("fourier_channels").get<int>();
  g.fourier_bandwidth = j.at("fourier_bandwidth").get<double>();
  g.layers = j.at("layers").get<int>();
  g.channels = j.at("channels").get<int>();
  g.mapping_layers = j.at("mapping_layers").get<int>();
  g.mapping_width = j.at("mapping_width").get<int>();
  g.kernel = kernel_from_string(j.at("kernel").get<std::string>());
  g.s_max = j.at("s_max").get<int>();
  g.seed = j.at("seed").get<std::uint64_t>();
  return g;
}

json discriminator_config_json(const DiscriminatorConfig& d) {
  json j;
  j["p"] = d.p;
  j["base_channels"] = d.base_channels;
  j["max_channels"] = d.max_channels;
  j["slope"] = d.slope;
  j["seed"] = d.seed;
  return j;
}

DiscriminatorConfig discriminator_config_from(const nlohmann::json& j) {
  DiscriminatorConfig d;
  d.p = j.at("p").get<int>();
  d.base_channels = j.at("base_channels").get<int>();
  d.max_channels = j.at("max_channels").get<int>();
  d.slope = j.at("slope").get<double>();
  d.seed = j.at("seed").get<std::uint64_t>();
  return d;
}

void put_basis(Checkpoint& ck, const std::string& prefix, const FourierBasis& b) {
  std::vector<double> f;
  for (const auto& v : b.frequencies) {
    f.push_back(v.x);
    f.push_back(v.y);
  }
  ck.blobs[prefix + "basis.frequencies"] = std::move(f);
  ck.blobs[prefix + "basis.phases"] = b.phases;
}

FourierBasis get_basis(const Checkpoint& ck, const std::string& prefix) {
  auto f = ck.blobs.find(prefix + "basis.frequencies");
  auto ph = ck.blobs.find(prefix + "basis.phases");
  if (f == ck.blobs.end() || ph == ck.blobs.end() || f->second.size() != 2 * ph->second.size()) {
    throw FormatError("checkpoint lacks a valid Fourier basis for " + prefix);
  }
  FourierBasis b;
  for (std::size_t i = 0; i < ph->second.size(); ++i) b.frequencies.push_back({f->second[2 * i], f->second[2 * i + 1]});
  b.phases = ph->second;
  return b;
}

void put_adam(Checkpoint& ck, const std::string& prefix, const nn::Adam& opt) {
  ck.put(prefix + "m/", opt.m);
  ck.put(prefix + "v/", opt.v);
  ck.blobs[prefix + "state"] = {opt.lr, opt.beta1, opt.beta2, opt.eps, static_cast<double>(opt.t)};
}

nn::Adam get_adam(const Checkpoint& ck, const std::string& prefix, const nn::ParamSet& like) {
  auto it = ck.blobs.find(prefix + "state");
  if (it == ck.blobs.end() || it->second.size() != 5) throw FormatError("checkpoint lacks optimizer state " + prefix);
  const auto& s = it->second;
  nn::Adam opt(like, s[0], s[1], s[2], s[3]);
  opt.t = static_cast<std::int64_t>(s[4]);
  ck.get(prefix + "m/", opt.m);
  ck.get(prefix + "v/", opt.v);
  return opt;
}

}  // namespace

Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& config) {
  Checkpoint ck;
  ck.config_hash = config_hash(config);
  json meta;
  meta["phase"] = state.phase;
  meta["step"] = state.step;
  meta["seed"] = config.seed;
  meta["config_hash"] = ck.config_hash;
  meta["code_version"] = code_version();
  meta["scale_branch"] = state.g.scale_branch();
  meta["last_r1"] = state.last_r1;
  meta["teacher_hash"] = state.teacher_hash;
  meta["ema"] = state.ema.has_value();
  meta["generator"] = generator_config_json(state.g.config());
  meta["discriminator"] = discriminator_config_json(state.d.config());
  meta["train"] = to_json_object(config, false);
  ck.meta = meta.dump();
  ck.put("gen/", state.g.params());
  put_basis(ck, "gen/", state.g.basis());
  ck.put("disc/", state.d.params());
  if (state.teacher) {
    ck.put("teacher/", state.teacher->params());
    put_basis(ck, "teacher/", state.teacher->basis());
  }
  if (state.ema) {
    ck.put("ema/", state.ema->params());
    put_basis(ck, "ema/", state.ema->basis());
  }
  put_adam(ck, "opt_g/", state.opt_g);
  put_adam(ck, "opt_d/", state.opt_d);
  return ck;
}

TrainState state_from_checkpoint(const Checkpoint& ck) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ck.meta);
    const GeneratorConfig gc = generator_config_from(meta.at("generator"));
    const DiscriminatorConfig dc = discriminator_config_from(meta.at("discriminator"));
    Generator g(gc);
    ck.get("gen/", g.params());
    g.set_basis(get_basis(ck, "gen/"));
    g.set_scale_branch_flag(meta.at("scale_branch").get<bool>());
    Discriminator d(dc);
    ck.get("disc/", d.params());
    std::optional<Generator> teacher;
    const int phase = meta.at("phase").get<int>();
    if (phase == 2) {
      teacher.emplace(gc);
      ck.get("teacher/", teacher->params());
      teacher->set_basis(get_basis(ck, "teacher/"));
    }
    std::optional<Generator> ema;
    if (meta.value("ema", false)) {
      ema.emplace(gc);
      ck.get("ema/", ema->params());
      ema->set_basis(get_basis(ck, "ema/"));
      ema->set_scale_branch_flag(g.scale_branch());
    }
    nn::Adam opt_g = get_adam(ck, "opt_g/", g.params());
    nn::Adam opt_d = get_adam(ck, "opt_d/", d.params());
    TrainState st{phase,          meta.at("step").get<std::int64_t>(), std::move(g), std::move(d), std::move(teacher),
                  meta.at("teacher_hash").get<std::uint64_t>(), std::move(opt_g), std::move(opt_d),
                  meta.at("last_r1").get<double>(), std::move(ema)};
    if (st.teacher && st.teacher->params().hash() != st.teacher_hash) {
      throw FormatError("checkpoint teacher weights do not match their recorded hash");
    }
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is malformed: ") + e.what());
  }
}

// ---- steps ------------------------------------------------------------------------------

TrainContext::TrainContext(const TrainConfig& cfg, const Manifest& m, ImageCache& c, int ph)
    : config(cfg),
      manifest(m),
      cache(c),
      sampler(m, [&] {
        SamplingPolicy pol = cfg.sampling_policy();
        if (ph == 1) pol.global_prob = 1.0;
        return pol;
      }()),
      perceptual(cfg.perceptual_seed),
      phase(ph) {
  if (ph != 1 && ph != 2) throw std::invalid_argument("phase must be 1 or 2");
}

namespace {

std::string stream(int phase, const char* name) { return "phase" + std::to_string(phase) + "/" + name; }

void check_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw NumericalError("non-finite " + std::string(what) + " at step " + std::to_string(step));
  }
}

void check_finite(const nn::ParamSet& grads, const char* what, std::int64_t step) {
  if (!grads.all_finite()) {
    for (const auto& p : grads.all()) {
      for (double v : p.data) {
        if (!std::isfinite(v)) {
          throw NumericalError("non-finite " + std::string(what) + " gradient in " + p.name + " at step " +
                               std::to_string(step));
        }
      }
    }
  }
}

StepStats train_step(TrainState& st, const TrainContext& ctx, std::span<const PatchBatchItem> real) {
  const TrainConfig& cfg = ctx.config;
  if (real.empty()) throw std::invalid_argument("empty training batch");
  const int phase = st.phase;
  const int p = cfg.p;
  const double inv_b = 1.0 / static_cast<double>(real.size());
  const auto base_index = static_cast<std::uint64_t>(st.step) * real.size();
  StepStats stats;

  // Discriminator.
  nn::ParamSet gd = st.d.params().zeros_like();
  nn::ParamSet tmp = gd;
  const bool do_r1 = cfg.lambda_r1 > 0.0 && st.step % cfg.r1_interval == 0;
  const double r1_coeff = 0.5 * cfg.lambda_r1 * cfg.r1_interval;
  double r1_sum = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const PatchBatchItem& item = real[i];
    tmp.set_zero();
    const double lr = st.d.forward_backward(item.pixels, 1.0, &tmp, nullptr);
    gd.add_scaled(tmp, -sigmoid(-lr) * inv_b);

    Rng rng = make_rng(cfg.seed, stream(phase, "d_fake"), base_index + i);
    const LatentCode z = sample_latent(cfg.z_dim, rng);
    const Image fake = st.g.synthesize_patch(z, item.spec);
    tmp.set_zero();
    const double lf = st.d.forward_backward(fake, 1.0, &tmp, nullptr);
    gd.add_scaled(tmp, sigmoid(lf) * inv_b);
    stats.loss_d += nonsat_losses(lr, lf).loss_d * inv_b;

    if (do_r1) r1_sum += st.d.r1(item.pixels, r1_coeff * inv_b, &gd).penalty;
  }
  if (do_r1) st.last_r1 = r1_sum * inv_b;
  stats.r1 = st.last_r1;
  stats.r1_applied = do_r1;
  check_finite(stats.loss_d, "loss_D", st.step);
  check_finite(stats.r1, "R1 penalty", st.step);
  check_finite(gd, "discriminator", st.step);
  st.opt_d.step(st.d.params(), gd);

  // Generator.
  nn::ParamSet gg = st.g.params().zeros_like();
  for (std::size_t i = 0; i < real.size(); ++i) {
    Rng rng = make_rng(cfg.seed, stream(phase, "g"), base_index + i);
    const LatentCode z = sample_latent(cfg.z_dim, rng);
    const PatchSpec spec = phase == 1 ? PatchSpec::global(p) : ctx.sampler.sample_fake_spec(rng);
    Generator::Trace trace;
    const Image fake = st.g.forward(z, spec, trace);
    Image grad;
    const double lf = st.d.forward_backward(fake, 1.0, nullptr, &grad);
    stats.loss_g += nonsat_losses(0.0, lf).loss_g * inv_b;
    const double dl = -sigmoid(-lf) * inv_b;
    for (double& v : grad.pixels) v *= dl;
    if (phase == 2) {
      const Image base = st.teacher->synthesize_patch(z, PatchSpec::global(p));
      const bool want = cfg.lambda_teacher > 0.0;
      const TeacherLoss tl = teacher_loss(fake, spec, base, {cfg.w_l1, cfg.w_perc}, &ctx.perceptual, want);
      stats.teacher += tl.value * inv_b;
      if (want) {
        const double k = cfg.lambda_teacher * inv_b;
        for (std::size_t j = 0; j < grad.pixels.size(); ++j) grad.pixels[j] += k * tl.grad_patch.pixels[j];
      }
    }
    st.g.backward(trace, grad, gg);
  }
  check_finite(stats.loss_g, "loss_G", st.step);
  check_finite(stats.teacher, "teacher loss", st.step);
  check_finite(gg, "generator", st.step);
  st.opt_g.step(st.g.params(), gg);
  if (st.ema) {
    const double beta = std::pow(0.5, 1.0 / cfg.ema_halflife);
    st.ema->params().scale(beta);
    st.ema->params().add_scaled(st.g.params(), 1.0 - beta);
  }
  ++st.step;
  return stats;
}

}  // namespace

std::vector<PatchBatchItem> draw_real_batch(const TrainContext& ctx, std::int64_t step) {
  const int b = ctx.config.batch_size;
  std::vector<PatchBatchItem> batch;
  batch.reserve(b);
  for (int i = 0; i < b; ++i) {
    Rng rng = make_rng(ctx.config.seed, stream(ctx.phase, "real"), static_cast<std::uint64_t>(step) * b + i);
    batch.push_back(ctx.sampler.sample_real(rng, ctx.cache));
  }
  return batch;
}

StepStats pretrain_step(TrainState& state, const TrainContext& ctx, std::span<const PatchBatchItem> real) {
  if (state.phase != 1 || ctx.phase != 1) throw std::logic_error("pretrain_step needs a phase-1 state");
  return train_step(state, ctx, real);
}

StepStats patch_train_step(TrainState& state, const TrainContext& ctx, std::span<const PatchBatchItem> real) {
  if (state.phase != 2 || ctx.phase != 2 || !state.teacher) throw std::logic_error("patch_train_step needs a phase-2 state");
  if (state.teacher->params().hash() != state.teacher_hash) throw std::logic_error("teacher weights changed");
  StepStats s = train_step(state, ctx, real);
  if (state.teacher->params().hash() != state.teacher_hash) throw std::logic_error("teacher weights changed");
  return s;
}

double teacher_drift(const Generator& g, const Generator& teacher, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("teacher_drift needs n >= 1");
  const PatchSpec global = PatchSpec::global(g.config().p);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "drift", static_cast<std::uint64_t>(i));
    const LatentCode z = sample_latent(g.config().z_dim, rng);
    total += mean_abs_diff(g.synthesize_patch(z, global), teacher.synthesize_patch(z, global));
  }
  return total / n;
}

// ---- run loop ----------------------------------------------------------------------------

std::string format_metric_row(const MetricRow& row) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", *v);
    return std::string(buf);
  };
  char wall[32];
  std::snprintf(wall, sizeof(wall), "%.3f", row.wallclock);
  return std::to_string(row.step) + "," + cell(row.loss_d) + "," + cell(row.loss_g) + "," + cell(row.r1) + "," +
         cell(row.teacher) + "," + cell(row.proxy_pfid) + "," + wall;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Keeps the header and every row with step <= last_step.
std::vector<std::string> truncated_log(const fs::path& path, std::int64_t last_step) {
  std::vector<std::string> kept;
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= last_step) kept.push_back(line);
  }
  return kept;
}

void write_samples(const TrainState& st, const TrainConfig& cfg, const fs::path& path) {
  const int p = cfg.p;
  std::vector<std::vector<Image>> cells;
  std::vector<std::vector<std::vector<std::string>>> captions;
  const std::vector<int> scales = st.phase == 1 ? std::vector<int>{p} : std::vector<int>{p, 2 * p, 4 * p};
  for (int k = 0; k < 4; ++k) {
    Rng rng = make_rng(cfg.seed, "samples", static_cast<std::uint64_t>(k));
    const LatentCode z = sample_latent(cfg.z_dim, rng);
    std::vector<Image> row;
    std::vector<std::vector<std::string>> caps;
    for (int s : scales) {
      row.push_back(st.output().synthesize_patch(z, {s, {0.5, 0.5}, p}));
      caps.push_back({"s=" + std::to_string(s)});
    }
    cells.push_back(std::move(row));
    captions.push_back(std::move(caps));
  }
  write_png(path, contact_sheet(cells, captions), {{"step", std::to_string(st.step)}});
}

}  // namespace

RunResult run_phase(const TrainConfig& config, const Manifest& manifest, const RunOptions& options) {
  config.validate();
  const int phase = options.phase;
  if (phase != 1 && phase != 2) throw std::invalid_argument("phase must be 1 or 2");
  if (manifest.records.empty()) throw std::invalid_argument("manifest is empty");
  const std::int64_t total = phase == 1 ? config.steps_phase1 : config.steps_phase2;
  const std::uint64_t hash = config_hash(config);

  std::optional<TrainState> state;
  if (options.resume) {
    const Checkpoint ck = load_checkpoint(*options.resume);
    if (ck.config_hash != hash) {
      throw std::invalid_argument("resume checkpoint was written with a different config (hash " +
                                  hex64(ck.config_hash) + ", current " + hex64(hash) + ")");
    }
    state.emplace(state_from_checkpoint(ck));
    if (state->phase != phase) throw std::invalid_argument("resume checkpoint belongs to another phase");
  } else if (phase == 1) {
    state.emplace(init_phase1(config, resolve_s_max(config, manifest)));
  } else {
    if (!options.init_checkpoint) throw std::invalid_argument("patch training needs a phase-1 checkpoint");
    const TrainState p1 = state_from_checkpoint(load_checkpoint(*options.init_checkpoint));
    if (p1.phase != 1) throw std::invalid_argument("init checkpoint is not a phase-1 checkpoint");
    state.emplace(init_phase2(p1, config));
  }
  TrainState& st = *state;
  if (st.g.config().p != config.p) throw std::invalid_argument("checkpoint p differs from the config's p");

  fs::create_directories(options.out_dir / "checkpoints");
  fs::create_directories(options.out_dir / "samples");
  write_text(options.out_dir / "config.json", config_to_json(config));
  {
    json prov;
    prov["code_version"] = code_version();
    prov["config_hash"] = hex64(hash);
    prov["phase"] = phase;
    prov["manifest"] = config.manifest;
    prov["manifest_records"] = manifest.records.size();
    if (options.init_checkpoint) prov["init_checkpoint"] = options.init_checkpoint->string();
    if (options.resume) prov["resumed_from"] = options.resume->string();
    write_text(options.out_dir / "provenance.json", prov.dump(2) + "\n");
  }

  ImageCache cache;
  TrainContext ctx(config, manifest, cache, phase);
  const RandomConvEmbedder embedder(config.embed_size, config.embed_features, config.embed_seed);
  const std::uint64_t proxy_seed = derive_seed(config.seed, "proxy");
  auto proxy = [&](bool baseline) {
    if (phase == 1) {
      return fid_at_res(manifest, cache, generator_images(st.output(), proxy_seed), config.p, embedder,
                        static_cast<std::size_t>(config.proxy_n), proxy_seed, baseline);
    }
    PfidOptions po;
    po.n = static_cast<std::size_t>(config.proxy_n);
    po.seed = proxy_seed;
    po.baseline = baseline;
    return pfid(manifest, cache, config.sampling_policy(), generator_patches(st.output(), proxy_seed), embedder, po);
  };

  RunResult result;
  const fs::path log_path = options.out_dir / "metrics.csv";
  std::vector<std::string> previous;
  if (options.resume) previous = truncated_log(log_path, st.step);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  log << kMetricHeader << "\n";
  for (const auto& line : previous) {
    log << line << "\n";
    if (line.rfind("0,", 0) == 0) {
      const auto cells = line.substr(0, line.rfind(','));
      const auto v = cells.substr(cells.rfind(',') + 1);
      if (!v.empty()) result.proxy_start = std::stod(v);
    }
  }
  log.flush();

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto emit = [&](const MetricRow& row) {
    log << format_metric_row(row) << "\n";
    log.flush();
    result.rows.push_back(row);
    if (options.verbose) std::cerr << "[phase " << phase << "] " << format_metric_row(row) << "\n";
  };

  if (st.step == 0) {
    MetricRow row;
    row.step = 0;
    row.proxy_pfid = proxy(false).value;
    row.wallclock = elapsed();
    result.proxy_start = row.proxy_pfid;
    emit(row);
  }

  auto checkpoint_path = [&](std::int64_t step) {
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_%06lld.ckpt", static_cast<long long>(step));
    return options.out_dir / "checkpoints" / name;
  };

  while (st.step < total) {
    const auto batch = draw_real_batch(ctx, st.step);
    const StepStats s = phase == 1 ? pretrain_step(st, ctx, batch) : patch_train_step(st, ctx, batch);
    const std::int64_t step = st.step;
    const bool last = step == total;
    const bool want_proxy = last || (config.proxy_every > 0 && step % config.proxy_every == 0);
    if (last || want_proxy || step % config.log_every == 0) {
      MetricRow row;
      row.step = step;
      row.loss_d = s.loss_d;
      row.loss_g = s.loss_g;
      row.r1 = s.r1;
      if (phase == 2) row.teacher = s.teacher;
      if (want_proxy) {
        const MetricResult m = proxy(last);
        row.proxy_pfid = m.value;
        if (last) {
          result.proxy_end = m.value;
          result.proxy_baseline = m.baseline;
        }
      }
      row.wallclock = elapsed();
      emit(row);
    }
    if (last || (config.checkpoint_every > 0 && step % config.checkpoint_every == 0)) {
      save_checkpoint(to_checkpoint(st, config), checkpoint_path(step));
    }
    if (last || (config.sample_every > 0 && step % config.sample_every == 0)) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06lld.png", static_cast<long long>(step));
      write_samples(st, config, options.out_dir / "samples" / name);
    }
  }

  result.final_checkpoint = options.out_dir / "final.ckpt";
  save_checkpoint(to_checkpoint(st, config), result.final_checkpoint);
  if (!result.proxy_end) {
    const MetricResult m = proxy(true);
    result.proxy_end = m.value;
    result.proxy_baseline = m.baseline;
  }
  json summary;
  summary["phase"] = phase;
  summary["steps"] = st.step;
  summary["config_hash"] = hex64(hash);
  summary["proxy_start"] = result.proxy_start ? json(*result.proxy_start) : json(nullptr);
  summary["proxy_end"] = *result.proxy_end;
  summary["proxy_baseline"] = result.proxy_baseline ? json(*result.proxy_baseline) : json(nullptr);
  summary["final_checkpoint"] = result.final_checkpoint.string();
  write_text(options.out_dir / "summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace anyres
