#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>

#include "anyres/datapipe.hpp"
#include "anyres/resample.hpp"

using namespace anyres;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("anyres_test_datapipe_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Manifest synthetic_manifest(int p, const std::vector<std::pair<int, int>>& sizes, int hr_threshold) {
  Manifest m;
  m.p = p;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto [w, h] = sizes[i];
    const int side = std::min(w, h);
    m.records.push_back({"r" + std::to_string(i), "mem://r" + std::to_string(i), w, h,
                         side >= std::max(hr_threshold, p) ? Split::HR : Split::LR});
  }
  return m;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("ingest records native sizes in path order and is reproducible") {
  const fs::path dir = fresh_dir("sizes");
  write_procedural_corpus(dir, {{96, 64}, {128, 128}, {200, 150}}, 1);
  const IngestResult r = ingest(dir, {64, 128});
  REQUIRE(r.manifest.records.size() == 3);
  CHECK(r.skipped == 0);
  CHECK(r.manifest.records[0].width == 96);
  CHECK(r.manifest.records[0].height == 64);
  CHECK(r.manifest.records[0].split == Split::LR);
  CHECK(r.manifest.records[1].short_side() == 128);
  CHECK(r.manifest.records[1].split == Split::HR);
  CHECK(r.manifest.records[2].width == 200);
  CHECK(r.manifest.records[2].split == Split::HR);

  write_manifest(r.manifest, dir / "m1.jsonl");
  write_manifest(ingest(dir, {64, 128}).manifest, dir / "m2.jsonl");
  CHECK(slurp(dir / "m1.jsonl") == slurp(dir / "m2.jsonl"));

  const Manifest back = read_manifest(dir / "m1.jsonl", 64);
  CHECK(back.records == r.manifest.records);
}

TEST_CASE("ingest skips undecodable files") {
  const fs::path dir = fresh_dir("corrupt");
  std::vector<std::pair<int, int>> sizes(10, {80, 72});
  write_procedural_corpus(dir, sizes, 2);
  const fs::path victim = dir / "img_0004.png";
  const auto size = fs::file_size(victim);
  fs::resize_file(victim, size / 2);
  std::ofstream(dir / "notes.txt") << "not an image";
  const IngestResult r = ingest(dir, {64, 0});
  CHECK(r.manifest.records.size() == 9);
  CHECK(r.skipped == 1);
  REQUIRE(r.skipped_paths.size() == 1);
  CHECK(r.skipped_paths[0].find("img_0004.png") != std::string::npos);
}

TEST_CASE("ingest errors") {
  CHECK_THROWS_AS(ingest(fs::temp_directory_path() / "anyres_definitely_missing_dir", {64, 0}), std::invalid_argument);
  const fs::path empty = fresh_dir("empty");
  CHECK_THROWS(ingest(empty, {64, 0}));
}

TEST_CASE("manifest parsing rejects malformed lines") {
  const fs::path dir = fresh_dir("badmanifest");
  std::ofstream(dir / "m.jsonl") << "{\"id\":\"a\",\"path\":\"x.png\",\"width\":10}\n";
  CHECK_THROWS(read_manifest(dir / "m.jsonl", 8));
}

TEST_CASE("half of the draws are global views") {
  const Manifest m = synthetic_manifest(64, {{256, 256}, {128, 96}, {300, 200}, {64, 64}}, 0);
  const PatchSampler sampler(m, {64, 0, 0, 0.5});
  int global = 0;
  for (int i = 0; i < 10000; ++i) {
    Rng rng = make_rng(77, "test/global", i);
    global += sampler.draw(rng).global ? 1 : 0;
  }
  const double frac = global / 10000.0;
  CHECK(frac >= 0.48);
  CHECK(frac <= 0.52);
}

TEST_CASE("expected scale for a single large record") {
  const Manifest m = synthetic_manifest(256, {{1024, 1024}}, 0);
  const DatasetReport rep = dataset_stats(m, {256, 0, 0, 0.5}, 10000, 3);
  CHECK(std::abs(rep.mean_scale - 448.0) <= 10.0);
  CHECK(rep.histogram.size() == 1);
  CHECK(rep.hr_min == 1024);
  CHECK(rep.hr_max == 1024);
}

TEST_CASE("dataset stats") {
  SUBCASE("no HR records means every draw is global") {
    const Manifest m = synthetic_manifest(64, {{64, 64}, {100, 80}}, 512);
    const DatasetReport rep = dataset_stats(m, {64, 0, 0, 0.5}, 500, 1);
    CHECK(rep.hr_count == 0);
    CHECK(rep.lr_count == 2);
    CHECK(rep.mean_scale == 64.0);
  }
  SUBCASE("mixed LR/HR composition") {
    std::vector<std::pair<int, int>> sizes(70, {256, 256});
    for (int s = 512; s <= 1024; s += 8) sizes.push_back({s, s + 10});
    sizes.push_back({1024, 1024});
    const Manifest m = synthetic_manifest(256, sizes, 512);
    const DatasetReport rep = dataset_stats(m, {256, 0, 0, 0.5}, 2000, 1);
    CHECK(rep.lr_count == 70);
    CHECK(rep.hr_min == 512);
    CHECK(rep.hr_max == 1024);
    CHECK(rep.hr_count == m.records.size() - 70);
  }
}

TEST_CASE("a record of exactly p only yields the global window") {
  const Manifest m = synthetic_manifest(64, {{64, 64}}, 0);
  const PatchSampler sampler(m, {64, 0, 0, 0.0});
  for (int i = 0; i < 50; ++i) {
    Rng rng = make_rng(5, "test/exact", i);
    const PatchSpec spec = sampler.draw(rng).spec(64);
    CHECK(spec.s == 64);
    CHECK(spec.v == Vec2{0.5, 0.5});
  }
}

TEST_CASE("draws respect containment") {
  const Manifest m = synthetic_manifest(32, {{300, 260}, {128, 128}, {64, 90}}, 0);
  const PatchSampler sampler(m, {32, 0, 0, 0.3});
  for (int i = 0; i < 3000; ++i) {
    Rng rng = make_rng(8, "test/contain", i);
    const PatchDraw d = sampler.draw(rng);
    const PatchSpec spec = d.spec(32);
    REQUIRE(is_valid(spec));
    if (d.global) CHECK(spec == PatchSpec::global(32));
    if (spec.s == 64) {
      CHECK(spec.v.x >= 0.25);
      CHECK(spec.v.x <= 0.75);
    }
  }
}

TEST_CASE("fake specs follow the real distribution") {
  const Manifest m = synthetic_manifest(32, {{300, 260}, {128, 128}, {64, 90}, {200, 400}}, 0);
  const PatchSampler sampler(m, {32, 0, 0, 0.5});
  std::vector<double> rs, fs_, rx, fx, ry, fy;
  int fake_global = 0;
  for (int i = 0; i < 10000; ++i) {
    Rng a = make_rng(9, "test/real", i);
    Rng b = make_rng(9, "test/fake", i);
    const PatchSpec r = sampler.draw(a).spec(32);
    const PatchSpec f = sampler.sample_fake_spec(b);
    rs.push_back(r.s);
    fs_.push_back(f.s);
    rx.push_back(r.v.x);
    fx.push_back(f.v.x);
    ry.push_back(r.v.y);
    fy.push_back(f.v.y);
    if (f.is_global()) ++fake_global;
  }
  const double crit = 1.628 * std::sqrt(2.0 / 10000);  // 1% level
  CHECK(ks_statistic(rs, fs_) < crit);
  CHECK(ks_statistic(rx, fx) < crit);
  CHECK(ks_statistic(ry, fy) < crit);
  CHECK(fake_global / 10000.0 >= 0.48);
  CHECK(fake_global / 10000.0 <= 0.52);
}

TEST_CASE("real patches are replayable from their draw") {
  const Image native = render_procedural(230, 170, 4);
  Manifest m;
  m.p = 32;
  m.records.push_back({"a", "mem://a", native.width, native.height, Split::HR});
  ImageCache cache;
  cache.insert("mem://a", native);
  const PatchSampler sampler(m, {32, 0, 0, 0.5});
  for (int i = 0; i < 40; ++i) {
    Rng rng = make_rng(10, "test/replay", i);
    const PatchBatchItem item = sampler.sample_real(rng, cache);
    CHECK(item.source_id == "a");
    CHECK(item.spec == item.draw.spec(32));
    CHECK(sampler.realize(item.draw, cache).pixels == item.pixels);
    // Independent path: crop, full resize to s, exact p x p crop.
    const auto& d = item.draw;
    const Image full = resample(square_crop(native, d.crop_top, d.crop_left, native.short_side()), d.s, d.s);
    const Image direct = square_crop(full, d.patch_top, d.patch_left, 32);
    CHECK(max_abs_diff(direct, item.pixels) <= 1e-12);
  }
}

TEST_CASE("non-global draws need HR records") {
  const Manifest m = synthetic_manifest(64, {{100, 100}}, 512);
  const PatchSampler sampler(m, {64, 0, 0, 0.0});
  CHECK_FALSE(sampler.has_patch_branch());
  Rng rng(1);
  CHECK_THROWS(sampler.draw(rng));
}

TEST_CASE("scale range limits") {
  const Manifest m = synthetic_manifest(32, {{400, 400}}, 0);
  const PatchSampler sampler(m, {32, 48, 96, 0.0});
  for (int i = 0; i < 500; ++i) {
    Rng rng = make_rng(12, "test/range", i);
    const int s = sampler.draw(rng).s;
    CHECK(s >= 48);
    CHECK(s <= 96);
  }
  const PatchSampler fixed(m, SamplingPolicy::fixed(32, 80));
  Rng rng(2);
  CHECK(fixed.draw(rng).s == 80);
}

TEST_CASE("procedural scenes are seeded and resolution independent") {
  const Image a = render_procedural(128, 96, 5);
  CHECK(render_procedural(128, 96, 5) == a);
  CHECK_FALSE(render_procedural(128, 96, 6) == a);
  // The same scene at twice the size, downsampled, stays close to the original.
  const Image big = render_procedural(256, 192, 5);
  CHECK(mean_abs_diff(resample(big, 96, 128), a) < 0.02);
}
