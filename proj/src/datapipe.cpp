#include "anyres/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <random>
#include <sstream>
#include <stdexcept>

#include "anyres/errors.hpp"
#include "anyres/resample.hpp"

namespace anyres {

std::string to_string(Split s) { return s == Split::HR ? "HR" : "LR"; }

Split split_from_string(const std::string& s) {
  if (s == "HR") return Split::HR;
  if (s == "LR") return Split::LR;
  throw FormatError("unknown split tag '" + s + "'");
}

std::vector<const ImageRecord*> Manifest::hr() const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : records) {
    if (r.split == Split::HR) out.push_back(&r);
  }
  return out;
}

std::size_t Manifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [s](const ImageRecord& r) { return r.split == s; }));
}

// ---- manifest I/O --------------------------------------------------------------

std::string manifest_to_jsonl(const Manifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["path"] = r.path;
    j["width"] = r.width;
    j["height"] = r.height;
    j["split"] = to_string(r.split);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << manifest_to_jsonl(manifest);
}

Manifest read_manifest(const std::filesystem::path& path, int p) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  Manifest m;
  m.p = p;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ImageRecord r;
      r.id = j.at("id").get<std::string>();
      r.path = j.at("path").get<std::string>();
      r.width = j.at("width").get<int>();
      r.height = j.at("height").get<int>();
      r.split = split_from_string(j.at("split").get<std::string>());
      if (r.width < 1 || r.height < 1) throw FormatError("non-positive image size");
      if (r.split == Split::HR && r.short_side() < p) {
        throw FormatError("HR record '" + r.id + "' is smaller than p");
      }
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

// ---- ingestion -----------------------------------------------------------------

IngestResult ingest(const std::filesystem::path& directory, const IngestOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) throw std::invalid_argument("not a directory: " + directory.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no images found in " + directory.string());

  const int threshold = std::max(options.hr_threshold, options.p);
  IngestResult result;
  result.manifest.p = options.p;
  for (const auto& file : files) {
    Image img;
    try {
      img = read_image(file);
    } catch (const std::exception& e) {
      ++result.skipped;
      result.skipped_paths.push_back(file.generic_string());
      std::cerr << "warning: skipping " << file.generic_string() << ": " << e.what() << "\n";
      continue;
    }
    ImageRecord r;
    r.id = fs::relative(file, directory).generic_string();
    r.path = file.generic_string();
    r.width = img.width;
    r.height = img.height;
    r.split = r.short_side() >= threshold ? Split::HR : Split::LR;
    result.manifest.records.push_back(std::move(r));
  }
  if (result.manifest.records.empty()) {
    throw std::runtime_error("no decodable images in " + directory.string());
  }
  return result;
}

std::shared_ptr<const Image> ImageCache::get(const ImageRecord& record) {
  {
    std::lock_guard lock(mutex_);
    auto it = images_.find(record.path);
    if (it != images_.end()) return it->second;
  }
  auto img = std::make_shared<const Image>(read_image(record.path));
  if (img->width != record.width || img->height != record.height) {
    throw FormatError("image " + record.path + " no longer matches its manifest size");
  }
  std::lock_guard lock(mutex_);
  return images_.emplace(record.path, std::move(img)).first->second;
}

void ImageCache::insert(const std::string& path, Image image) {
  std::lock_guard lock(mutex_);
  images_[path] = std::make_shared<const Image>(std::move(image));
}

// ---- sampling ------------------------------------------------------------------

SamplingPolicy SamplingPolicy::fixed(int p, int s) {
  SamplingPolicy policy;
  policy.p = p;
  policy.s_lo = s;
  policy.s_hi = s;
  policy.global_prob = 0.0;
  return policy;
}

PatchSpec PatchDraw::spec(int p) const {
  if (global) return PatchSpec::global(p);
  return {s, {(patch_left + 0.5 * p) / s, (patch_top + 0.5 * p) / s}, p};
}

Image extract_patch(const Image& native, const PatchDraw& draw, int p) {
  const int side = native.short_side();
  const Image square = square_crop(native, draw.crop_top, draw.crop_left, side);
  if (draw.global) return resample(square, p, p);
  if (draw.s > side || draw.s < p || draw.patch_top < 0 || draw.patch_left < 0 || draw.patch_top + p > draw.s ||
      draw.patch_left + p > draw.s) {
    throw std::invalid_argument("extract_patch: draw does not fit the image");
  }
  if (draw.s == side) return square_crop(square, draw.patch_top, draw.patch_left, p);
  // Only the p x p window of the s x s resize is evaluated; the sample
  // positions are those of the full resize.
  const double step = static_cast<double>(side) / draw.s;
  std::vector<double> ys(p), xs(p);
  for (int o = 0; o < p; ++o) {
    ys[o] = (draw.patch_top + o + 0.5) * step - 0.5;
    xs[o] = (draw.patch_left + o + 0.5) * step - 0.5;
  }
  const double scale = static_cast<double>(draw.s) / side;
  return apply_separable(square, make_axis(side, ys, scale), make_axis(side, xs, scale));
}

PatchSampler::PatchSampler(const Manifest& manifest, SamplingPolicy policy)
    : manifest_(&manifest), policy_(policy) {
  if (policy_.p != manifest.p) throw std::invalid_argument("sampling policy and manifest disagree on p");
  if (policy_.global_prob < 0.0 || policy_.global_prob > 1.0) {
    throw std::invalid_argument("global-sample probability must be in [0,1]");
  }
  if (policy_.s_hi > 0 && policy_.s_hi < policy_.lo()) throw std::invalid_argument("empty scale range");
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split == Split::HR && r.short_side() >= policy_.lo() && r.short_side() >= policy_.p) {
      eligible_.push_back(i);
    }
  }
}

PatchDraw PatchSampler::draw(Rng& rng) const {
  const auto& records = manifest_->records;
  if (records.empty()) throw std::runtime_error("cannot sample from an empty manifest");
  const int p = policy_.p;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PatchDraw d;
  d.global = unit(rng) < policy_.global_prob;
  if (d.global) {
    d.record = std::uniform_int_distribution<std::size_t>(0, records.size() - 1)(rng);
  } else {
    if (eligible_.empty()) {
      throw std::runtime_error("no HR records are eligible for patch sampling at s >= " +
                               std::to_string(policy_.lo()));
    }
    d.record = eligible_[std::uniform_int_distribution<std::size_t>(0, eligible_.size() - 1)(rng)];
  }
  const ImageRecord& r = records[d.record];
  const int side = r.short_side();
  d.crop_top = std::uniform_int_distribution<int>(0, r.height - side)(rng);
  d.crop_left = std::uniform_int_distribution<int>(0, r.width - side)(rng);
  if (d.global) {
    d.s = p;
    return d;
  }
  d.s = std::uniform_int_distribution<int>(std::max(policy_.lo(), p), policy_.hi_for(side))(rng);
  d.patch_top = std::uniform_int_distribution<int>(0, d.s - p)(rng);
  d.patch_left = std::uniform_int_distribution<int>(0, d.s - p)(rng);
  return d;
}

PatchBatchItem PatchSampler::realize(const PatchDraw& draw, ImageCache& cache) const {
  const ImageRecord& r = manifest_->records.at(draw.record);
  const auto img = cache.get(r);
  PatchBatchItem item;
  item.pixels = extract_patch(*img, draw, policy_.p);
  item.spec = draw.spec(policy_.p);
  item.source_id = r.id;
  item.draw = draw;
  return item;
}

PatchBatchItem PatchSampler::sample_real(Rng& rng, ImageCache& cache) const { return realize(draw(rng), cache); }

PatchSpec PatchSampler::sample_fake_spec(Rng& rng) const { return draw(rng).spec(policy_.p); }

// ---- statistics ----------------------------------------------------------------

DatasetReport dataset_stats(const Manifest& manifest, const SamplingPolicy& policy, std::size_t n_draws,
                            std::uint64_t seed, int bin_width) {
  if (n_draws < 1) throw std::invalid_argument("dataset_stats needs at least one draw");
  if (bin_width < 1) throw std::invalid_argument("histogram bin width must be positive");
  DatasetReport rep;
  rep.bin_width = bin_width;
  rep.draws = n_draws;
  std::vector<int> hr_sides;
  for (const auto& r : manifest.records) {
    const int side = r.short_side();
    rep.histogram[(side / bin_width) * bin_width] += 1;
    if (r.split == Split::HR) {
      ++rep.hr_count;
      hr_sides.push_back(side);
    } else {
      ++rep.lr_count;
    }
  }
  if (!hr_sides.empty()) {
    std::sort(hr_sides.begin(), hr_sides.end());
    rep.hr_min = hr_sides.front();
    rep.hr_max = hr_sides.back();
    rep.hr_median = hr_sides[(hr_sides.size() - 1) / 2];
  }
  PatchSampler sampler(manifest, policy);
  if (!sampler.has_patch_branch() || manifest.records.empty()) {
    // Only the global branch can fire.
    rep.mean_scale = policy.p;
    return rep;
  }
  Rng rng = make_rng(seed, "dataset_stats");
  double total = 0.0;
  for (std::size_t i = 0; i < n_draws; ++i) total += sampler.draw(rng).s;
  rep.mean_scale = total / static_cast<double>(n_draws);
  return rep;
}

// ---- procedural corpus -----------------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

struct Scene {
  Rgb top, bottom;
  double gx, gy;
  struct Disc {
    double cx, cy, radius;
    Rgb colour;
  };
  std::vector<Disc> discs;
  double sq_cx, sq_cy, sq_half;
  int cells;
  Rgb check_a, check_b;
};

Scene make_scene(std::uint64_t seed) {
  Rng rng = make_rng(seed, "procedural/scene");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto colour = [&] { return Rgb{u(rng), u(rng), u(rng)}; };
  Scene sc;
  sc.top = colour();
  sc.bottom = colour();
  const double angle = 2.0 * 3.14159265358979323846 * u(rng);
  sc.gx = std::cos(angle);
  sc.gy = std::sin(angle);
  const int n_discs = 2 + static_cast<int>(u(rng) * 3.0);
  for (int i = 0; i < n_discs; ++i) {
    sc.discs.push_back({0.15 + 0.7 * u(rng), 0.15 + 0.7 * u(rng), 0.06 + 0.16 * u(rng), colour()});
  }
  sc.sq_half = 0.12 + 0.12 * u(rng);
  sc.sq_cx = sc.sq_half + (1.0 - 2.0 * sc.sq_half) * u(rng);
  sc.sq_cy = sc.sq_half + (1.0 - 2.0 * sc.sq_half) * u(rng);
  sc.cells = 6 + static_cast<int>(u(rng) * 7.0);
  sc.check_a = colour();
  sc.check_b = colour();
  return sc;
}

Rgb shade(const Scene& sc, double x, double y) {
  const double t = std::clamp(0.5 + 0.7 * ((x - 0.5) * sc.gx + (y - 0.5) * sc.gy), 0.0, 1.0);
  Rgb c{sc.top.r + t * (sc.bottom.r - sc.top.r), sc.top.g + t * (sc.bottom.g - sc.top.g),
        sc.top.b + t * (sc.bottom.b - sc.top.b)};
  if (std::abs(x - sc.sq_cx) <= sc.sq_half && std::abs(y - sc.sq_cy) <= sc.sq_half) {
    const double cell = 2.0 * sc.sq_half / sc.cells;
    const int ix = static_cast<int>(std::floor((x - sc.sq_cx + sc.sq_half) / cell));
    const int iy = static_cast<int>(std::floor((y - sc.sq_cy + sc.sq_half) / cell));
    c = ((ix + iy) % 2 == 0) ? sc.check_a : sc.check_b;
  }
  for (const auto& d : sc.discs) {
    const double dx = x - d.cx;
    const double dy = y - d.cy;
    if (dx * dx + dy * dy <= d.radius * d.radius) c = d.colour;
  }
  return c;
}

}  // namespace

Image render_procedural(int width, int height, std::uint64_t seed) {
  if (width < 1 || height < 1) throw std::invalid_argument("procedural image size must be positive");
  const Scene sc = make_scene(seed);
  constexpr int kSuper = 4;
  const double unit = 1.0 / std::min(width, height);
  Image img(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const Rgb c = shade(sc, (x + (sx + 0.5) / kSuper) * unit, (y + (sy + 0.5) / kSuper) * unit);
          acc[0] += c.r;
          acc[1] += c.g;
          acc[2] += c.b;
        }
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = acc[c] / (kSuper * kSuper);
    }
  }
  return img;
}

std::vector<CorpusEntry> write_procedural_corpus(const std::filesystem::path& dir,
                                                 const std::vector<std::pair<int, int>>& sizes,
                                                 std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<CorpusEntry> out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04zu.png", i);
    const auto [w, h] = sizes[i];
    write_png(dir / name, render_procedural(w, h, derive_seed(seed, "procedural/image", i)));
    out.push_back({name, w, h});
  }
  return out;
}

}  // namespace anyres
