#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anyres/datapipe.hpp"
#include "anyres/generator.hpp"
#include "anyres/image.hpp"
#include "anyres/nn.hpp"

namespace anyres {

/// Streaming mean and covariance. Accumulation and merging follow the
/// pairwise (Chan et al.) update, so merge(stats(A), stats(B)) matches
/// stats(A u B) up to rounding.
class FeatureStats {
 public:
  FeatureStats() = default;
  explicit FeatureStats(int dim);

  void add(std::span<const double> x);
  static FeatureStats merge(const FeatureStats& a, const FeatureStats& b);

  int dim() const { return static_cast<int>(mean_.size()); }
  std::size_t count() const { return n_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Unbiased (n - 1) covariance; requires n >= 2.
  Eigen::MatrixXd covariance() const;

  /// Direct construction from moments (tests, analytic Gaussians).
  static FeatureStats from_moments(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, std::size_t n);

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd comoment_;  // sum of outer products of deviations
  std::size_t n_ = 0;
};

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).
/// Tr((S1 S2)^{1/2}) is the sum of square roots of the eigenvalues of S1 S2
/// (real and non-negative for PSD inputs). Negative eigenvalues down to -1e-4
/// relative to the largest one are clamped to zero; anything more negative,
/// or with a larger imaginary part, raises.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Deterministic image -> feature map at a fixed input size.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(const Image& img) const = 0;
  virtual int input_size() const = 0;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
};

/// Seeded random convolutional features: Lanczos resize to the input size,
/// three 3x3 conv + leaky-ReLU stages with 2x2 pooling between them, then
/// global average pooling.
class RandomConvEmbedder final : public Embedder {
 public:
  explicit RandomConvEmbedder(int input_size = 64, int features = 128, std::uint64_t seed = 1234);

  std::vector<double> embed(const Image& img) const override;
  int input_size() const override { return input_size_; }
  int dim() const override { return features_; }
  std::string id() const override;

 private:
  struct Stage {
    int cin, cout;
    std::vector<double> weight, bias;
  };
  int input_size_;
  int features_;
  std::uint64_t seed_;
  std::vector<Stage> stages_;
};

FeatureStats feature_stats(std::span<const Image> images, const Embedder& embedder);

/// Produces the generated patch for the index-th evaluation sample at spec.
using PatchSource = std::function<Image(const PatchSpec& spec, std::uint64_t index)>;
/// Produces the index-th generated full image at res x res.
using ImageSource = std::function<Image(int res, std::uint64_t index)>;

/// Patches from a generator with a fresh latent per index (stream "eval/z").
PatchSource generator_patches(const Generator& g, std::uint64_t seed);
ImageSource generator_images(const Generator& g, std::uint64_t seed);

struct MetricResult {
  double value = 0.0;
  std::optional<double> baseline;  // real-vs-real at the same n
  std::size_t n = 0;
};

struct PfidOptions {
  std::size_t n = 2048;
  std::uint64_t seed = 0;
  bool downsample = false;  // ds-pFID: resize patches to the embedder size instead of cropping
  bool baseline = true;
};

/// Real patches from the non-global branch of `policy` against generated
/// patches at the same (s, v). Patches larger than the embedder input are
/// randomly cropped (pFID) or resized (ds-pFID).
MetricResult pfid(const Manifest& manifest, ImageCache& cache, SamplingPolicy policy, const PatchSource& source,
                  const Embedder& embedder, const PfidOptions& options);

/// Global-image Frechet distance at res: real images are square-cropped at
/// a random offset and Lanczos-resized to res; generated images are rendered
/// at res.
MetricResult fid_at_res(const Manifest& manifest, ImageCache& cache, const ImageSource& source, int res,
                        const Embedder& embedder, std::size_t n, std::uint64_t seed, bool baseline = true);

struct SpectrumBin {
  int radius = 0;  // cycles per image
  double power = 0.0;
  double log_power = 0.0;  // log10(power + 1e-30)
};

/// Azimuthally averaged power spectrum of the luminance (channel mean),
/// averaged over images. Bins are integer radii 0 .. n/2.
std::vector<SpectrumBin> spectrum_profile(std::span<const Image> images);

struct SweepEntry {
  int s = 0;
  bool exceeds_mean_scale = false;
  bool exceeds_training_max = false;
  std::optional<double> pfid;
};

struct SweepResult {
  std::vector<std::vector<Image>> cells;  // [latent][scale]
  std::vector<SweepEntry> entries;
  Image sheet;
};

struct SweepOptions {
  Vec2 center{0.5, 0.5};
  double mean_scale = 0.0;   // E[s] of the training sampler
  int training_s_max = 0;    // largest s drawn in training
  // pFID per scale is computed when a manifest is given.
  const Manifest* manifest = nullptr;
  ImageCache* cache = nullptr;
  const Embedder* embedder = nullptr;
  std::size_t pfid_n = 256;
  std::uint64_t seed = 0;
};

/// Renders the patch at `center` for every (z, s); s must be ascending.
/// The centre is clamped per scale to keep the patch inside the domain.
SweepResult extrapolation_sweep(const Generator& g, std::span<const LatentCode> zs, std::span<const int> scales,
                                const SweepOptions& options);

}  // namespace anyres
