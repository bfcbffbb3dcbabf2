// Command-line front end. Exit codes: 0 success, 2 usage or config error,
// 3 numerical abort, 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "anyres/checkpoint.hpp"
#include "anyres/datapipe.hpp"
#include "anyres/errors.hpp"
#include "anyres/eval.hpp"
#include "anyres/raster.hpp"
#include "anyres/resample.hpp"
#include "anyres/rng.hpp"
#include "anyres/train.hpp"

namespace fs = std::filesystem;
using namespace anyres;
using json = nlohmann::ordered_json;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

fs::path output_root() {
  const char* env = std::getenv("ANYRES_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path or_default(const std::string& flag, const std::string& fallback) {
  return flag.empty() ? output_root() / fallback : fs::path(flag);
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Loaded {
  TrainState state;
  TrainConfig config;
  std::uint64_t config_hash;
};

Loaded load_model(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  const Checkpoint ck = load_checkpoint(path);
  const auto meta = nlohmann::json::parse(ck.meta);
  return {state_from_checkpoint(ck), config_from_json(meta.at("train").dump()), ck.config_hash};
}

Vec2 parse_center(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw UsageError("--center expects vx,vy");
  try {
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw UsageError("--center expects two numbers, got '" + text + "'");
  }
}

std::vector<int> parse_scales(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("bad scale '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--scales needs at least one scale");
  return out;
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << "\n";
}

Manifest load_manifest_for(const std::string& path, int p) {
  if (path.empty()) throw UsageError("a manifest is required");
  if (!fs::exists(path)) throw UsageError("manifest not found: " + path);
  return read_manifest(path, p);
}

TrainConfig load_run_config(const std::string& path) {
  if (path.empty()) throw UsageError("--config is required");
  if (!fs::exists(path)) throw UsageError("config not found: " + path);
  TrainConfig c = load_config(path);
  c.validate();
  return c;
}

int run(int argc, char** argv) {
  CLI::App app{"anyres: any-resolution patch GAN training and evaluation"};
  app.require_subcommand(1);

  // ingest
  std::string ingest_dir, ingest_out;
  int ingest_p = 64, split_rule = 0;
  auto* ingest_cmd = app.add_subcommand("ingest", "Scan a directory of images into a manifest");
  ingest_cmd->add_option("--dir", ingest_dir, "Image directory")->required();
  ingest_cmd->add_option("--out-manifest", ingest_out, "Manifest path (JSON lines)")->required();
  ingest_cmd->add_option("--split-rule", split_rule, "Short-side threshold for HR (0 = p)");
  ingest_cmd->add_option("--p", ingest_p, "Patch size");

  // stats
  std::string stats_manifest;
  int stats_p = 64, stats_lo = 0, stats_hi = 0, stats_draws = 10000;
  std::uint64_t stats_seed = 0;
  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics and the sampler's E[s]");
  stats_cmd->add_option("--manifest", stats_manifest)->required();
  stats_cmd->add_option("--p", stats_p);
  stats_cmd->add_option("--s-lo", stats_lo);
  stats_cmd->add_option("--s-hi", stats_hi);
  stats_cmd->add_option("--draws", stats_draws);
  stats_cmd->add_option("--seed", stats_seed);

  // corpus
  std::string corpus_dir;
  int corpus_count = 64, corpus_min = 64, corpus_max = 256;
  std::uint64_t corpus_seed = 0;
  auto* corpus_cmd = app.add_subcommand("corpus", "Write a procedural multi-resolution image corpus");
  corpus_cmd->add_option("--out-dir", corpus_dir)->required();
  corpus_cmd->add_option("--count", corpus_count);
  corpus_cmd->add_option("--min-size", corpus_min);
  corpus_cmd->add_option("--max-size", corpus_max);
  corpus_cmd->add_option("--seed", corpus_seed);
  double corpus_full = 0.0;
  corpus_cmd->add_option("--full-fraction", corpus_full, "Fraction of images rendered at max-size x max-size");

  // training
  std::string cfg_path, init_ckpt, resume_ckpt, train_out;
  std::optional<double> lambda_override;
  auto* pre_cmd = app.add_subcommand("pretrain", "Phase 1: fixed-resolution training on global views");
  pre_cmd->add_option("--config", cfg_path)->required();
  pre_cmd->add_option("--out", train_out, "Run directory (overrides the config's out_dir)");
  pre_cmd->add_option("--resume", resume_ckpt, "Checkpoint to resume from");
  auto* patch_cmd = app.add_subcommand("train-patches", "Phase 2: multi-scale patch training with a frozen teacher");
  patch_cmd->add_option("--config", cfg_path)->required();
  patch_cmd->add_option("--init-checkpoint", init_ckpt, "Phase-1 checkpoint");
  patch_cmd->add_option("--out", train_out, "Run directory (overrides the config's out_dir)");
  patch_cmd->add_option("--resume", resume_ckpt, "Checkpoint to resume from");
  patch_cmd->add_option("--lambda-teacher", lambda_override, "Overrides lambda_teacher from the config");

  // sample / render
  std::string ckpt, out_path, center_text = "0.5,0.5";
  std::uint64_t seed = 0;
  int scale = 0, res = 0;
  auto* sample_cmd = app.add_subcommand("sample", "One p x p patch at scale S and centre v");
  sample_cmd->add_option("--checkpoint", ckpt)->required();
  sample_cmd->add_option("--seed", seed);
  sample_cmd->add_option("--scale", scale)->required();
  sample_cmd->add_option("--center", center_text, "vx,vy");
  sample_cmd->add_option("--out", out_path);
  auto* render_cmd = app.add_subcommand("render", "Full R x R image assembled from patches");
  render_cmd->add_option("--checkpoint", ckpt)->required();
  render_cmd->add_option("--seed", seed);
  render_cmd->add_option("--res", res)->required();
  render_cmd->add_option("--out", out_path);

  // eval
  std::string metric, manifest_path;
  std::size_t n = 2048;
  int embed_size = 0, embed_features = 0;
  auto* eval_cmd = app.add_subcommand("eval", "pfid | ds-pfid | fid | spectrum");
  eval_cmd->add_option("--metric", metric)->required();
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--manifest", manifest_path);
  eval_cmd->add_option("--n", n);
  eval_cmd->add_option("--res", res, "fid/spectrum resolution (default p)");
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--embed-size", embed_size, "Embedder input size (default from the run config)");
  eval_cmd->add_option("--embed-features", embed_features);
  eval_cmd->add_option("--out", out_path, "Report path; spectrum also writes .csv and .png next to it");

  // extrapolate
  std::string scales_text;
  std::size_t sweep_n = 0;
  int sweep_latents = 4;
  auto* extra_cmd = app.add_subcommand("extrapolate", "Contact sheet over scales with range markers");
  extra_cmd->add_option("--checkpoint", ckpt)->required();
  extra_cmd->add_option("--scales", scales_text)->required();
  extra_cmd->add_option("--out", out_path, "Sheet PNG; the report is written next to it");
  extra_cmd->add_option("--seed", seed);
  extra_cmd->add_option("--center", center_text, "vx,vy");
  extra_cmd->add_option("--latents", sweep_latents);
  extra_cmd->add_option("--manifest", manifest_path, "Adds pFID per scale");
  extra_cmd->add_option("--n", sweep_n, "pFID sample count per scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*ingest_cmd) {
    IngestOptions opts;
    opts.p = ingest_p;
    opts.hr_threshold = split_rule;
    const IngestResult r = ingest(ingest_dir, opts);
    write_manifest(r.manifest, ingest_out);
    std::cout << "records " << r.manifest.records.size() << " (LR " << r.manifest.count(Split::LR) << ", HR "
              << r.manifest.count(Split::HR) << "), skipped " << r.skipped << "\n";
    return 0;
  }
  if (*stats_cmd) {
    const Manifest m = load_manifest_for(stats_manifest, stats_p);
    SamplingPolicy pol;
    pol.p = stats_p;
    pol.s_lo = stats_lo;
    pol.s_hi = stats_hi;
    const DatasetReport rep = dataset_stats(m, pol, static_cast<std::size_t>(stats_draws), stats_seed);
    json j;
    j["lr_count"] = rep.lr_count;
    j["hr_count"] = rep.hr_count;
    j["hr_min"] = rep.hr_min;
    j["hr_median"] = rep.hr_median;
    j["hr_max"] = rep.hr_max;
    j["mean_scale"] = rep.mean_scale;
    j["draws"] = rep.draws;
    j["bin_width"] = rep.bin_width;
    json hist = json::object();
    for (const auto& [bin, count] : rep.histogram) hist[std::to_string(bin)] = count;
    j["histogram"] = hist;
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  if (*corpus_cmd) {
    if (corpus_count < 1 || corpus_min < 1 || corpus_max < corpus_min) throw UsageError("bad corpus size range");
    if (corpus_full < 0.0 || corpus_full > 1.0) throw UsageError("--full-fraction must lie in [0, 1]");
    std::vector<std::pair<int, int>> sizes;
    Rng rng = make_rng(corpus_seed, "corpus/sizes");
    std::uniform_int_distribution<int> side(corpus_min, corpus_max);
    const int full = static_cast<int>(std::lround(corpus_full * corpus_count));
    for (int i = 0; i < corpus_count; ++i) {
      if (i < full) {
        sizes.emplace_back(corpus_max, corpus_max);
        continue;
      }
      const int a = side(rng);
      const int b = std::uniform_int_distribution<int>(a, std::min(corpus_max, a + a / 2))(rng);
      sizes.push_back(i % 2 ? std::pair{a, b} : std::pair{b, a});
    }
    const auto entries = write_procedural_corpus(corpus_dir, sizes, corpus_seed);
    std::cout << "wrote " << entries.size() << " images to " << corpus_dir << "\n";
    return 0;
  }
  if (*pre_cmd || *patch_cmd) {
    TrainConfig cfg = load_run_config(cfg_path);
    if (lambda_override) cfg.lambda_teacher = *lambda_override;
    cfg.validate();
    const int phase = *pre_cmd ? 1 : 2;
    RunOptions opts;
    opts.phase = phase;
    opts.out_dir = !train_out.empty() ? fs::path(train_out)
                   : !cfg.out_dir.empty() ? fs::path(cfg.out_dir)
                                          : output_root() / (phase == 1 ? "pretrain" : "patches");
    if (!resume_ckpt.empty()) {
      if (!fs::exists(resume_ckpt)) throw UsageError("resume checkpoint not found: " + resume_ckpt);
      opts.resume = resume_ckpt;
    }
    if (phase == 2 && !opts.resume) {
      if (init_ckpt.empty()) throw UsageError("train-patches needs --init-checkpoint");
      if (!fs::exists(init_ckpt)) throw UsageError("init checkpoint not found: " + init_ckpt);
      opts.init_checkpoint = init_ckpt;
    }
    const Manifest m = load_manifest_for(cfg.manifest, cfg.p);
    const RunResult r = run_phase(cfg, m, opts);
    std::cout << "final checkpoint " << r.final_checkpoint.string() << "\n";
    return 0;
  }
  if (*sample_cmd) {
    const Loaded model = load_model(ckpt);
    const int p = model.state.output().config().p;
    const PatchSpec spec{scale, parse_center(center_text), p};
    if (!is_valid(spec)) {
      throw UsageError("invalid patch: need scale >= " + std::to_string(p) + " and the centre inside [" +
                       std::to_string(0.5 * p / std::max(scale, 1)) + ", " +
                       std::to_string(1.0 - 0.5 * p / std::max(scale, 1)) + "]");
    }
    Rng rng = make_rng(seed, "eval/z");
    const Image img = model.state.output().synthesize_patch(sample_latent(model.state.output().config().z_dim, rng), spec);
    const fs::path out = or_default(out_path, "sample.png");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out, img, {{"config_hash", hex64(model.config_hash)}, {"code_version", code_version()}});
    return 0;
  }
  if (*render_cmd) {
    const Loaded model = load_model(ckpt);
    if (res < 1) throw UsageError("--res must be positive");
    Rng rng = make_rng(seed, "eval/z");
    const Image img = model.state.output().synthesize_image(sample_latent(model.state.output().config().z_dim, rng), res);
    const fs::path out = or_default(out_path, "render.png");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out, img, {{"config_hash", hex64(model.config_hash)}, {"code_version", code_version()}});
    return 0;
  }
  if (*eval_cmd) {
    if (metric != "pfid" && metric != "ds-pfid" && metric != "fid" && metric != "spectrum") {
      std::cerr << "unknown metric '" << metric << "'\n" << eval_cmd->help();
      return 2;
    }
    const Loaded model = load_model(ckpt);
    const Generator& g = model.state.output();
    const int p = g.config().p;
    const int r = res > 0 ? res : p;
    const RandomConvEmbedder embedder(embed_size > 0 ? embed_size : model.config.embed_size,
                                      embed_features > 0 ? embed_features : model.config.embed_features,
                                      model.config.embed_seed);
    json report;
    report["metric"] = metric;
    if (metric == "spectrum") {
      if (n < 1) throw UsageError("--n must be positive");
      std::vector<Image> gen;
      for (std::size_t i = 0; i < n; ++i) gen.push_back(generator_images(g, seed)(r, i));
      const auto bins = spectrum_profile(gen);
      std::vector<SpectrumBin> real_bins;
      if (!manifest_path.empty()) {
        const Manifest m = load_manifest_for(manifest_path, p);
        ImageCache cache;
        std::vector<Image> real;
        for (std::size_t i = 0; i < n; ++i) {
          Rng rng = make_rng(seed, "spectrum/real", i);
          const auto& rec = m.records[std::uniform_int_distribution<std::size_t>(0, m.records.size() - 1)(rng)];
          const int side = rec.short_side();
          const Image crop = square_crop(*cache.get(rec), (rec.height - side) / 2, (rec.width - side) / 2, side);
          real.push_back(resample(crop, r, r));
        }
        real_bins = spectrum_profile(real);
      }
      const fs::path base = or_default(out_path, "spectrum.json");
      if (base.has_parent_path()) fs::create_directories(base.parent_path());
      fs::path csv = base, png = base;
      csv.replace_extension(".csv");
      png.replace_extension(".png");
      std::ofstream out(csv);
      out << "radius,power,log_power" << (real_bins.empty() ? "" : ",real_log_power") << "\n";
      std::vector<std::pair<double, double>> curve;
      for (std::size_t i = 0; i < bins.size(); ++i) {
        char line[128];
        std::snprintf(line, sizeof(line), "%d,%.10g,%.10g", bins[i].radius, bins[i].power, bins[i].log_power);
        out << line;
        if (!real_bins.empty()) {
          std::snprintf(line, sizeof(line), ",%.10g", real_bins[i].log_power);
          out << line;
        }
        out << "\n";
        curve.emplace_back(bins[i].radius, bins[i].log_power);
      }
      write_png(png, line_plot(curve));
      report["n"] = n;
      report["res"] = r;
      report["csv"] = csv.string();
      report["plot"] = png.string();
    } else {
      const Manifest m = load_manifest_for(manifest_path, p);
      ImageCache cache;
      MetricResult res_m;
      if (metric == "fid") {
        res_m = fid_at_res(m, cache, generator_images(g, seed), r, embedder, n, seed, true);
      } else {
        PfidOptions po;
        po.n = n;
        po.seed = seed;
        po.downsample = metric == "ds-pfid";
        po.baseline = true;
        res_m = pfid(m, cache, model.config.sampling_policy(), generator_patches(g, seed), embedder, po);
      }
      report["value"] = res_m.value;
      report["n"] = res_m.n;
      report["baseline"] = res_m.baseline ? json(*res_m.baseline) : json(nullptr);
      if (metric == "fid") report["res"] = r;
    }
    report["seed"] = seed;
    report["embedder_id"] = embedder.id();
    report["config_hash"] = hex64(model.config_hash);
    report["code_version"] = code_version();
    std::cout << report.dump(2) << "\n";
    if (!out_path.empty()) write_json_file(out_path, report);
    return 0;
  }
  if (*extra_cmd) {
    const std::vector<int> scales = parse_scales(scales_text);
    const Loaded model = load_model(ckpt);
    const Generator& g = model.state.output();
    const int p = g.config().p;
    std::vector<LatentCode> zs;
    for (int k = 0; k < sweep_latents; ++k) {
      Rng rng = make_rng(seed, "eval/z", static_cast<std::uint64_t>(k));
      zs.push_back(sample_latent(g.config().z_dim, rng));
    }
    SweepOptions so;
    so.center = parse_center(center_text);
    so.seed = seed;
    std::optional<Manifest> m;
    ImageCache cache;
    const RandomConvEmbedder embedder(model.config.embed_size, model.config.embed_features, model.config.embed_seed);
    if (!manifest_path.empty()) {
      m = load_manifest_for(manifest_path, p);
      const SamplingPolicy pol = model.config.sampling_policy();
      const DatasetReport rep = dataset_stats(*m, pol, 10000, seed);
      so.mean_scale = rep.mean_scale;
      int largest = p;
      for (const auto* r : m->hr()) largest = std::max(largest, pol.hi_for(r->short_side()));
      so.training_s_max = largest;
      if (sweep_n > 0) {
        so.manifest = &*m;
        so.cache = &cache;
        so.embedder = &embedder;
        so.pfid_n = sweep_n;
      }
    } else {
      so.training_s_max = g.config().s_max;
    }
    const SweepResult sweep = extrapolation_sweep(g, zs, scales, so);
    const fs::path out = or_default(out_path, "extrapolate.png");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out, sweep.sheet);
    json report;
    report["scales"] = json::array();
    for (const auto& e : sweep.entries) {
      json row;
      row["s"] = e.s;
      row["exceeds_mean_scale"] = e.exceeds_mean_scale;
      row["exceeds_training_max"] = e.exceeds_training_max;
      row["pfid"] = e.pfid ? json(*e.pfid) : json(nullptr);
      report["scales"].push_back(row);
    }
    report["mean_scale"] = so.mean_scale;
    report["training_s_max"] = so.training_s_max;
    report["config_hash"] = hex64(model.config_hash);
    fs::path rpath = out;
    rpath.replace_extension(".json");
    write_json_file(rpath, report);
    std::cout << report.dump(2) << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
