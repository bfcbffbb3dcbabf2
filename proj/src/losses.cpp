#include "anyres/losses.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "anyres/nn.hpp"
#include "anyres/resample.hpp"
#include "anyres/rng.hpp"

namespace anyres {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

NonsatLosses nonsat_losses(double real_logit, double fake_logit) {
  return {softplus(-real_logit) + softplus(fake_logit), softplus(-fake_logit)};
}

double r1_penalty(const Discriminator& d, const Image& x) { return d.r1(x, 0.0, nullptr).penalty; }

// ---- perceptual ------------------------------------------------------------------

RandomConvPerceptual::RandomConvPerceptual(std::uint64_t seed, int width) {
  if (width < 1) throw std::invalid_argument("perceptual width must be positive");
  Rng rng = make_rng(seed, "perceptual");
  const int widths[3] = {kChannels, width, 2 * width};
  for (int i = 0; i < 2; ++i) {
    Stage& st = stages_[i];
    st.cin = widths[i];
    st.cout = widths[i + 1];
    st.weight.resize(static_cast<std::size_t>(9) * st.cin * st.cout);
    st.bias.resize(st.cout);
    std::normal_distribution<double> w(0.0, std::sqrt(2.0 / (9.0 * st.cin)));
    std::normal_distribution<double> b(0.0, 0.1);
    for (double& x : st.weight) x = w(rng);
    for (double& x : st.bias) x = b(rng);
  }
}

RandomConvPerceptual::Activations RandomConvPerceptual::run(const Image& img) const {
  if (img.height != img.width || img.height % 2 != 0) throw std::invalid_argument("perceptual input must be square with even side");
  Activations a;
  std::vector<double> x = img.pixels;
  int side = img.height;
  for (int s = 0; s < 2; ++s) {
    const Stage& st = stages_[s];
    if (s > 0) {
      std::vector<double> pooled;
      nn::avg_pool2(x.data(), side, side, st.cin, pooled);
      x.swap(pooled);
      side /= 2;
    }
    a.side.push_back(side);
    a.cols.emplace_back();
    nn::im2col(x.data(), side, side, st.cin, 3, 1, a.cols.back());
    const int rows = side * side;
    std::vector<double> pre(static_cast<std::size_t>(rows) * st.cout);
    for (int r = 0; r < rows; ++r) std::copy(st.bias.begin(), st.bias.end(), pre.begin() + static_cast<std::ptrdiff_t>(r) * st.cout);
    nn::gemm(false, false, rows, st.cout, 9 * st.cin, a.cols.back().data(), st.weight.data(), pre.data(), true);
    x.resize(pre.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = nn::leaky(pre[i]);
    a.pre.push_back(std::move(pre));
    a.out.push_back(x);
  }
  return a;
}

double RandomConvPerceptual::distance(const Image& a, const Image& b, Image* grad_a) const {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("perceptual inputs differ in size");
  const Activations fa = run(a);
  const Activations fb = run(b);
  double total = 0.0;
  std::vector<std::vector<double>> g(2);
  for (int s = 0; s < 2; ++s) {
    const auto& x = fa.out[s];
    const auto& y = fb.out[s];
    const double inv = 1.0 / static_cast<double>(x.size());
    g[s].resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - y[i];
      total += d * d * inv;
      g[s][i] = 2.0 * d * inv;
    }
  }
  if (!grad_a) return total;

  std::vector<double> gx = g[1];
  for (int s = 1; s >= 0; --s) {
    const Stage& st = stages_[s];
    const int side = fa.side[s];
    const int rows = side * side;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= nn::leaky_slope(fa.pre[s][i]);
    std::vector<double> gcols(fa.cols[s].size(), 0.0);
    nn::gemm(false, true, rows, 9 * st.cin, st.cout, gx.data(), st.weight.data(), gcols.data(), false);
    std::vector<double> gin(static_cast<std::size_t>(rows) * st.cin, 0.0);
    nn::col2im_add(gcols.data(), side, side, st.cin, 3, 1, gin.data());
    if (s == 1) {
      const int in_side = fa.side[0];
      std::vector<double> up(static_cast<std::size_t>(in_side) * in_side * st.cin, 0.0);
      nn::avg_pool2_backward(gin.data(), in_side, in_side, st.cin, up.data());
      for (std::size_t i = 0; i < up.size(); ++i) up[i] += g[0][i];
      gx = std::move(up);
    } else {
      gx = std::move(gin);
    }
  }
  *grad_a = Image(a.height, a.width);
  grad_a->pixels = std::move(gx);
  return total;
}

// ---- teacher ------------------------------------------------------------------------

TeacherLoss teacher_loss(const Image& patch, const PatchSpec& spec, const Image& teacher_base,
                         const TeacherWeights& weights, const PerceptualDistance* perceptual, bool want_grad) {
  if (weights.l1 < 0.0 || weights.perc < 0.0) throw std::invalid_argument("teacher weights must be non-negative");
  if (teacher_base.height != spec.p || teacher_base.width != spec.p) {
    throw std::invalid_argument("teacher view must be p x p");
  }
  const BaseWarp warp(spec);
  const MaskedImage warped = warp.apply(patch);
  const auto& mask = warp.mask();
  TeacherLoss out;
  out.covered = warped.covered();
  if (want_grad) out.grad_patch = Image(patch.height, patch.width);
  if (out.covered == 0) return out;

  const int n = spec.p * spec.p;
  Image grad_base(spec.p, spec.p);
  const double inv = 1.0 / (static_cast<double>(out.covered) * kChannels);
  Image teacher_masked(spec.p, spec.p);
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (int c = 0; c < kChannels; ++c) {
      const std::size_t k = static_cast<std::size_t>(i) * kChannels + c;
      teacher_masked.pixels[k] = teacher_base.pixels[k];
      const double d = warped.image.pixels[k] - teacher_base.pixels[k];
      out.l1 += std::abs(d) * inv;
      grad_base.pixels[k] = weights.l1 * (d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0));
    }
  }
  if (perceptual && weights.perc > 0.0) {
    Image g;
    out.perc = perceptual->distance(warped.image, teacher_masked, want_grad ? &g : nullptr);
    if (want_grad) {
      for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        for (int c = 0; c < kChannels; ++c) {
          const std::size_t k = static_cast<std::size_t>(i) * kChannels + c;
          grad_base.pixels[k] += weights.perc * g.pixels[k];
        }
      }
    }
  }
  out.value = weights.l1 * out.l1 + weights.perc * out.perc;
  if (want_grad) out.grad_patch = warp.adjoint(grad_base);
  return out;
}

}  // namespace anyres
