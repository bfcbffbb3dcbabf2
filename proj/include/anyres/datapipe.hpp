#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "anyres/geometry.hpp"
#include "anyres/image.hpp"
#include "anyres/rng.hpp"

namespace anyres {

enum class Split { LR, HR };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// One dataset image at its native resolution. Pixels are never stored here.
struct ImageRecord {
  std::string id;
  std::string path;
  int width = 0;
  int height = 0;
  Split split = Split::LR;

  int short_side() const { return width < height ? width : height; }
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Manifest {
  std::vector<ImageRecord> records;
  int p = 0;

  std::vector<const ImageRecord*> hr() const;
  std::size_t count(Split s) const;
};

/// JSON-lines, one object per record: {"id","path","width","height","split"}.
std::string manifest_to_jsonl(const Manifest& manifest);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path, int p);

struct IngestOptions {
  int p = 64;
  /// Records whose short side is at least this are tagged HR (and must be
  /// >= p). Zero means "use p".
  int hr_threshold = 0;
};

struct IngestResult {
  Manifest manifest;
  int skipped = 0;
  std::vector<std::string> skipped_paths;
};

/// Scans `directory` recursively for .png/.jpg/.jpeg files, fully decodes each
/// one and records its native size. Records are sorted by path. Undecodable
/// files are skipped and counted. Throws if nothing usable is found.
IngestResult ingest(const std::filesystem::path& directory, const IngestOptions& options);

/// Read-through cache of decoded images keyed by record path. Images can also
/// be inserted directly (tests, procedural data).
class ImageCache {
 public:
  std::shared_ptr<const Image> get(const ImageRecord& record);
  void insert(const std::string& path, Image image);

 private:
  std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const Image>> images_;
};

/// Scale/location sampling policy shared by the real and fake sides.
struct SamplingPolicy {
  int p = 64;
  int s_lo = 0;               // 0 means p
  int s_hi = 0;               // 0 means unbounded
  double global_prob = 0.5;   // probability of the s = p, v = (0.5, 0.5) view

  int lo() const { return s_lo > 0 ? s_lo : p; }
  int hi_for(int s_im) const { return s_hi > 0 && s_hi < s_im ? s_hi : s_im; }

  /// Policy that always draws exactly scale s (no global branch unless s = p).
  static SamplingPolicy fixed(int p, int s);
};

/// Everything needed to replay one patch extraction.
struct PatchDraw {
  bool global = false;
  std::size_t record = 0;  // index into Manifest::records
  int crop_top = 0;        // short-side square crop inside the native image
  int crop_left = 0;
  int s = 0;
  int patch_top = 0;       // p x p crop inside the s x s resampled square
  int patch_left = 0;

  PatchSpec spec(int p) const;
};

struct PatchBatchItem {
  Image pixels;
  PatchSpec spec;
  std::string source_id;
  PatchDraw draw;
};

/// Deterministic extraction for a draw: square crop, Lanczos resize to s,
/// p x p crop.
Image extract_patch(const Image& native, const PatchDraw& draw, int p);

/// The stochastic policy: with probability global_prob a uniformly chosen
/// record (LR or HR) is resized whole to p x p; otherwise an HR record with
/// short side >= s_lo is cropped square, resized to an integer s drawn
/// uniformly from [s_lo, min(s_im, s_hi)], and a p x p window is taken at a
/// uniformly random integer offset. Fake specs come from the same draws, so
/// both sides share one (s, v) distribution exactly.
class PatchSampler {
 public:
  PatchSampler(const Manifest& manifest, SamplingPolicy policy);

  const SamplingPolicy& policy() const { return policy_; }
  const Manifest& manifest() const { return *manifest_; }
  bool has_patch_branch() const { return !eligible_.empty(); }

  PatchDraw draw(Rng& rng) const;
  PatchBatchItem sample_real(Rng& rng, ImageCache& cache) const;
  PatchSpec sample_fake_spec(Rng& rng) const;
  PatchBatchItem realize(const PatchDraw& draw, ImageCache& cache) const;

 private:
  const Manifest* manifest_;
  SamplingPolicy policy_;
  std::vector<std::size_t> eligible_;  // HR records usable by the patch branch
};

struct DatasetReport {
  std::size_t lr_count = 0;
  std::size_t hr_count = 0;
  std::map<int, std::size_t> histogram;  // short-side bin start -> count
  int bin_width = 0;
  int hr_min = 0;
  int hr_median = 0;
  int hr_max = 0;
  double mean_scale = 0.0;  // Monte-Carlo E[s]
  std::size_t draws = 0;
};

DatasetReport dataset_stats(const Manifest& manifest, const SamplingPolicy& policy, std::size_t n_draws,
                            std::uint64_t seed, int bin_width = 128);

/// Procedural multi-resolution scene: a smooth two-colour gradient, a few
/// antialiased discs and a checkerboard square. The scene is defined on the
/// continuous domain (scaled by the short side), so the same seed rendered at
/// different sizes shows the same content at different detail levels.
Image render_procedural(int width, int height, std::uint64_t seed);

struct CorpusEntry {
  std::string filename;
  int width = 0;
  int height = 0;
};

/// Writes PNGs named img_0000.png ... for the requested sizes.
std::vector<CorpusEntry> write_procedural_corpus(const std::filesystem::path& dir,
                                                 const std::vector<std::pair<int, int>>& sizes,
                                                 std::uint64_t seed);

}  // namespace anyres
