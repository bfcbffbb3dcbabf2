#include "anyres/eval.hpp"

#include <fftw3.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "anyres/raster.hpp"
#include "anyres/resample.hpp"
#include "anyres/rng.hpp"

namespace anyres {

// ---- FeatureStats ------------------------------------------------------------------

FeatureStats::FeatureStats(int dim) : mean_(Eigen::VectorXd::Zero(dim)), comoment_(Eigen::MatrixXd::Zero(dim, dim)) {}

void FeatureStats::add(std::span<const double> x) {
  if (static_cast<int>(x.size()) != dim()) throw std::invalid_argument("feature dimension mismatch");
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), dim());
  ++n_;
  const Eigen::VectorXd delta = v - mean_;
  mean_ += delta / static_cast<double>(n_);
  comoment_.noalias() += delta * (v - mean_).transpose();
}

FeatureStats FeatureStats::merge(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("cannot merge feature stats of different dimension");
  if (a.n_ == 0) return b;
  if (b.n_ == 0) return a;
  FeatureStats out(a.dim());
  out.n_ = a.n_ + b.n_;
  const double na = static_cast<double>(a.n_);
  const double nb = static_cast<double>(b.n_);
  const double n = static_cast<double>(out.n_);
  const Eigen::VectorXd delta = b.mean_ - a.mean_;
  out.mean_ = a.mean_ + delta * (nb / n);
  out.comoment_ = a.comoment_ + b.comoment_ + delta * delta.transpose() * (na * nb / n);
  return out;
}

Eigen::MatrixXd FeatureStats::covariance() const {
  if (n_ < 2) throw std::invalid_argument("covariance needs at least two samples");
  Eigen::MatrixXd cov = comoment_ / static_cast<double>(n_ - 1);
  return 0.5 * (cov + cov.transpose());
}

FeatureStats FeatureStats::from_moments(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, std::size_t n) {
  if (n < 2) throw std::invalid_argument("feature stats need n >= 2");
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) throw std::invalid_argument("moment shapes differ");
  FeatureStats s(static_cast<int>(mean.size()));
  s.mean_ = std::move(mean);
  s.comoment_ = cov * static_cast<double>(n - 1);
  s.n_ = n;
  return s;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("frechet_distance: dimensions differ (" + std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()) + ")");
  }
  const Eigen::MatrixXd s1 = a.covariance();
  const Eigen::MatrixXd s2 = b.covariance();
  const double mean_term = (a.mean() - b.mean()).squaredNorm();

  Eigen::EigenSolver<Eigen::MatrixXd> solver(s1 * s2, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eigendecomposition failed");
  const auto& eig = solver.eigenvalues();
  double scale = 1.0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) scale = std::max(scale, std::abs(eig[i]));
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    const double re = eig[i].real();
    const double im = eig[i].imag();
    if (re < -1e-4 * scale || std::abs(im) > 1e-4 * scale) {
      throw std::runtime_error("frechet_distance: covariance product has eigenvalue (" + std::to_string(re) + ", " +
                               std::to_string(im) + "); inputs are not PSD");
    }
    if (re > 0.0) trace_sqrt += std::sqrt(re);
  }
  const double d = mean_term + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
  return std::max(d, 0.0);
}

// ---- embedder ----------------------------------------------------------------------

RandomConvEmbedder::RandomConvEmbedder(int input_size, int features, std::uint64_t seed)
    : input_size_(input_size), features_(features), seed_(seed) {
  if (input_size < 4 || input_size % 4 != 0) throw std::invalid_argument("embedder input size must be a multiple of 4");
  if (features < 1) throw std::invalid_argument("embedder needs at least one feature");
  Rng rng = make_rng(seed, "embedder");
  const int widths[4] = {kChannels, 16, 32, features};
  for (int i = 0; i < 3; ++i) {
    Stage st{widths[i], widths[i + 1], {}, {}};
    st.weight.resize(static_cast<std::size_t>(9) * st.cin * st.cout);
    st.bias.resize(st.cout);
    std::normal_distribution<double> w(0.0, std::sqrt(2.0 / (9.0 * st.cin)));
    std::normal_distribution<double> b(0.0, 0.1);
    for (double& x : st.weight) x = w(rng);
    for (double& x : st.bias) x = b(rng);
    if (i == 0) {
      // Three of every four first-stage filters get zero spatial mean per input
      // channel, so most features see edges and texture rather than flat colour.
      for (int o = 0; o < st.cout; ++o) {
        if (o % 4 == 0) continue;
        for (int c = 0; c < st.cin; ++c) {
          double mean = 0.0;
          for (int t = 0; t < 9; ++t) mean += st.weight[(static_cast<std::size_t>(t) * st.cin + c) * st.cout + o] / 9.0;
          for (int t = 0; t < 9; ++t) st.weight[(static_cast<std::size_t>(t) * st.cin + c) * st.cout + o] -= mean;
        }
      }
    }
    stages_.push_back(std::move(st));
  }
}

std::string RandomConvEmbedder::id() const {
  return "randconv-v1-" + std::to_string(input_size_) + "-" + std::to_string(features_) + "-" +
         std::to_string(seed_);
}

std::vector<double> RandomConvEmbedder::embed(const Image& img) const {
  const Image in = resample(img, input_size_, input_size_);
  std::vector<double> x(in.pixels.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * in.pixels[i] - 1.0;
  int side = input_size_;
  std::vector<double> cols, y, pooled;
  for (std::size_t k = 0; k < stages_.size(); ++k) {
    const Stage& st = stages_[k];
    if (k > 0) {
      nn::avg_pool2(x.data(), side, side, st.cin, pooled);
      x.swap(pooled);
      side /= 2;
    }
    nn::im2col(x.data(), side, side, st.cin, 3, 1, cols);
    const int rows = side * side;
    y.resize(static_cast<std::size_t>(rows) * st.cout);
    for (int r = 0; r < rows; ++r) std::copy(st.bias.begin(), st.bias.end(), y.begin() + static_cast<std::ptrdiff_t>(r) * st.cout);
    nn::gemm(false, false, rows, st.cout, 9 * st.cin, cols.data(), st.weight.data(), y.data(), true);
    for (double& v : y) v = nn::leaky(v);
    x.swap(y);
  }
  std::vector<double> f(features_, 0.0);
  const int rows = side * side;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < features_; ++c) f[c] += x[static_cast<std::size_t>(r) * features_ + c];
  }
  for (double& v : f) v /= rows;
  return f;
}

FeatureStats feature_stats(std::span<const Image> images, const Embedder& embedder) {
  if (images.size() < 2) throw std::invalid_argument("feature_stats needs at least two images");
  FeatureStats stats(embedder.dim());
  for (const auto& img : images) stats.add(embedder.embed(img));
  return stats;
}

// ---- pFID / FID ----------------------------------------------------------------------

PatchSource generator_patches(const Generator& g, std::uint64_t seed) {
  return [&g, seed](const PatchSpec& spec, std::uint64_t index) {
    Rng rng = make_rng(seed, "eval/z", index);
    return g.synthesize_patch(sample_latent(g.config().z_dim, rng), spec);
  };
}

ImageSource generator_images(const Generator& g, std::uint64_t seed) {
  return [&g, seed](int res, std::uint64_t index) {
    Rng rng = make_rng(seed, "eval/z", index);
    return g.synthesize_image(sample_latent(g.config().z_dim, rng), res);
  };
}

namespace {

Image prepare_for_embedding(const Image& patch, int size, bool downsample, Rng& rng) {
  if (patch.height <= size && patch.width <= size) return patch;
  if (downsample) return resample(patch, size, size);
  std::uniform_int_distribution<int> top(0, patch.height - size), left(0, patch.width - size);
  const int t = top(rng);
  const int l = left(rng);
  return square_crop(patch, t, l, size);
}

}  // namespace

MetricResult pfid(const Manifest& manifest, ImageCache& cache, SamplingPolicy policy, const PatchSource& source,
                  const Embedder& embedder, const PfidOptions& options) {
  if (options.n < 2) throw std::invalid_argument("pfid needs at least two patches");
  policy.global_prob = 0.0;
  const PatchSampler sampler(manifest, policy);
  if (!sampler.has_patch_branch()) throw std::runtime_error("pfid: no HR records eligible for patch sampling");
  const int e = embedder.input_size();

  FeatureStats real(embedder.dim()), fake(embedder.dim());
  for (std::size_t i = 0; i < options.n; ++i) {
    Rng rng = make_rng(options.seed, "pfid/real", i);
    const PatchBatchItem item = sampler.sample_real(rng, cache);
    real.add(embedder.embed(prepare_for_embedding(item.pixels, e, options.downsample, rng)));
    Rng crop = make_rng(options.seed, "pfid/fake_crop", i);
    fake.add(embedder.embed(prepare_for_embedding(source(item.spec, i), e, options.downsample, crop)));
  }
  MetricResult result;
  result.n = options.n;
  result.value = frechet_distance(real, fake);
  if (options.baseline) {
    FeatureStats other(embedder.dim());
    for (std::size_t i = 0; i < options.n; ++i) {
      Rng rng = make_rng(options.seed, "pfid/baseline", i);
      const PatchBatchItem item = sampler.sample_real(rng, cache);
      other.add(embedder.embed(prepare_for_embedding(item.pixels, e, options.downsample, rng)));
    }
    result.baseline = frechet_distance(real, other);
  }
  return result;
}

MetricResult fid_at_res(const Manifest& manifest, ImageCache& cache, const ImageSource& source, int res,
                        const Embedder& embedder, std::size_t n, std::uint64_t seed, bool baseline) {
  if (n < 2) throw std::invalid_argument("fid_at_res needs at least two images");
  if (res < 1) throw std::invalid_argument("fid_at_res: resolution must be positive");
  if (manifest.records.empty()) throw std::runtime_error("fid_at_res: empty manifest");
  auto real_image = [&](std::string_view stream, std::size_t i) {
    Rng rng = make_rng(seed, stream, i);
    const auto& r = manifest.records[std::uniform_int_distribution<std::size_t>(0, manifest.records.size() - 1)(rng)];
    const auto img = cache.get(r);
    const int side = r.short_side();
    const int top = std::uniform_int_distribution<int>(0, r.height - side)(rng);
    const int left = std::uniform_int_distribution<int>(0, r.width - side)(rng);
    return resample(square_crop(*img, top, left, side), res, res);
  };
  FeatureStats real(embedder.dim()), fake(embedder.dim());
  for (std::size_t i = 0; i < n; ++i) {
    real.add(embedder.embed(real_image("fid/real", i)));
    fake.add(embedder.embed(source(res, i)));
  }
  MetricResult result;
  result.n = n;
  result.value = frechet_distance(real, fake);
  if (baseline) {
    FeatureStats other(embedder.dim());
    for (std::size_t i = 0; i < n; ++i) other.add(embedder.embed(real_image("fid/baseline", i)));
    result.baseline = frechet_distance(real, other);
  }
  return result;
}

// ---- spectrum ------------------------------------------------------------------------

std::vector<SpectrumBin> spectrum_profile(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("spectrum_profile needs at least one image");
  const int n = images.front().height;
  for (const auto& img : images) {
    if (img.height != n || img.width != n) throw std::invalid_argument("spectrum_profile: images must be square and equal-sized");
  }
  const int half = n / 2;
  const int nc = half + 1;
  double* in = fftw_alloc_real(static_cast<std::size_t>(n) * n);
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n) * nc);
  fftw_plan plan = fftw_plan_dft_r2c_2d(n, n, in, out, FFTW_ESTIMATE);

  std::vector<double> sum(half + 1, 0.0);
  std::vector<std::size_t> count(half + 1, 0);
  const double norm = 1.0 / (static_cast<double>(n) * n);
  for (const auto& img : images) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        in[y * n + x] = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
      }
    }
    fftw_execute(plan);
    for (int ky = 0; ky < n; ++ky) {
      const int fy = ky <= half ? ky : ky - n;
      for (int kx = 0; kx < n; ++kx) {
        const int fx = kx <= half ? kx : kx - n;
        // Hermitian symmetry supplies the columns r2c does not store.
        const int sy = kx < nc ? ky : (n - ky) % n;
        const int sx = kx < nc ? kx : n - kx;
        const fftw_complex& c = out[sy * nc + sx];
        const double power = (c[0] * c[0] + c[1] * c[1]) * norm * norm;
        const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(fx * fx + fy * fy))));
        if (r > half) continue;
        sum[r] += power;
        ++count[r];
      }
    }
  }
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(out);

  std::vector<SpectrumBin> bins;
  for (int r = 0; r <= half; ++r) {
    if (count[r] == 0) continue;
    const double p = sum[r] / static_cast<double>(count[r]);
    bins.push_back({r, p, std::log10(p + 1e-30)});
  }
  return bins;
}

// ---- extrapolation ---------------------------------------------------------------------

SweepResult extrapolation_sweep(const Generator& g, std::span<const LatentCode> zs, std::span<const int> scales,
                                const SweepOptions& options) {
  if (zs.empty() || scales.empty()) throw std::invalid_argument("extrapolation_sweep needs latents and scales");
  const int p = g.config().p;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] < p) throw std::invalid_argument("extrapolation scales must be >= p");
    if (i > 0 && scales[i] <= scales[i - 1]) throw std::invalid_argument("extrapolation scales must be ascending");
  }
  SweepResult result;
  result.cells.assign(zs.size(), {});
  std::vector<std::vector<std::vector<std::string>>> captions(zs.size());
  for (int s : scales) {
    const double half = 0.5 * p / s;
    const PatchSpec spec{s,
                         {std::clamp(options.center.x, half, 1.0 - half), std::clamp(options.center.y, half, 1.0 - half)},
                         p};
    char vbuf[48];
    std::snprintf(vbuf, sizeof(vbuf), "v=%.2f,%.2f", spec.v.x, spec.v.y);
    for (std::size_t k = 0; k < zs.size(); ++k) {
      result.cells[k].push_back(g.synthesize_patch(zs[k], spec));
      captions[k].push_back({"s=" + std::to_string(s), vbuf});
    }
    SweepEntry entry;
    entry.s = s;
    entry.exceeds_mean_scale = options.mean_scale > 0.0 && s > options.mean_scale;
    entry.exceeds_training_max = options.training_s_max > 0 && s > options.training_s_max;
    if (options.manifest && options.cache && options.embedder) {
      const PatchSampler probe(*options.manifest, SamplingPolicy::fixed(p, s));
      if (probe.has_patch_branch()) {
        PfidOptions po;
        po.n = options.pfid_n;
        po.seed = options.seed;
        po.baseline = false;
        entry.pfid = pfid(*options.manifest, *options.cache, SamplingPolicy::fixed(p, s),
                          generator_patches(g, options.seed), *options.embedder, po)
                         .value;
      }
    }
    result.entries.push_back(entry);
  }
  result.sheet = contact_sheet(result.cells, captions);
  return result;
}

}  // namespace anyres
