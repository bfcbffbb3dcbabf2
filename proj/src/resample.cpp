#include "anyres/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace anyres {

double lanczos_kernel(double x, int a) {
  if (a < 1) throw std::invalid_argument("Lanczos support must be >= 1");
  const double ax = std::abs(x);
  if (ax >= a) return 0.0;
  if (ax == 0.0) return 1.0;
  if (ax == std::floor(ax)) return 0.0;
  const double px = std::numbers::pi * x;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

ResampleAxis make_axis(int in_size, std::span<const double> positions, double scale, int a) {
  if (in_size < 1) throw std::invalid_argument("resample axis needs a non-empty input");
  if (!(scale > 0.0)) throw std::invalid_argument("resample scale must be positive");
  ResampleAxis axis;
  axis.in_size = in_size;
  axis.out_size = static_cast<int>(positions.size());
  axis.row_begin.reserve(positions.size() + 1);
  axis.row_begin.push_back(0);

  const double stretch = scale < 1.0 ? scale : 1.0;  // kernel evaluated at d * stretch
  const double radius = a / stretch;
  std::vector<double> dense(in_size);
  for (double x : positions) {
    std::fill(dense.begin(), dense.end(), 0.0);
    const int first = static_cast<int>(std::floor(x - radius));
    const int last = static_cast<int>(std::ceil(x + radius));
    double total = 0.0;
    for (int k = first; k <= last; ++k) {
      const double w = lanczos_kernel((k - x) * stretch, a);
      if (w == 0.0) continue;
      dense[std::clamp(k, 0, in_size - 1)] += w;
      total += w;
    }
    if (total == 0.0) throw std::runtime_error("resample: kernel has no support at position");
    for (int k = 0; k < in_size; ++k) {
      if (dense[k] == 0.0) continue;
      axis.index.push_back(k);
      axis.weight.push_back(dense[k] / total);
    }
    axis.row_begin.push_back(static_cast<int>(axis.index.size()));
  }
  return axis;
}

ResampleAxis make_resize_axis(int in_size, int out_size, int a) {
  if (out_size < 1) throw std::invalid_argument("resample output size must be positive");
  std::vector<double> positions(out_size);
  const double step = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) positions[o] = (o + 0.5) * step - 0.5;
  return make_axis(in_size, positions, static_cast<double>(out_size) / in_size, a);
}

Image apply_separable(const Image& img, const ResampleAxis& rows, const ResampleAxis& cols) {
  if (rows.in_size != img.height || cols.in_size != img.width) {
    throw std::invalid_argument("apply_separable: axis/image size mismatch");
  }
  // Vertical pass: (rows.out x W).
  Image tmp(rows.out_size, img.width);
  for (int o = 0; o < rows.out_size; ++o) {
    double* dst = &tmp.pixels[tmp.index(o, 0, 0)];
    for (int t = rows.row_begin[o]; t < rows.row_begin[o + 1]; ++t) {
      const double w = rows.weight[t];
      const double* src = &img.pixels[img.index(rows.index[t], 0, 0)];
      for (int n = 0; n < img.width * kChannels; ++n) dst[n] += w * src[n];
    }
  }
  Image out(rows.out_size, cols.out_size);
  for (int y = 0; y < rows.out_size; ++y) {
    for (int o = 0; o < cols.out_size; ++o) {
      double acc[kChannels] = {0.0, 0.0, 0.0};
      for (int t = cols.row_begin[o]; t < cols.row_begin[o + 1]; ++t) {
        const double w = cols.weight[t];
        const std::size_t base = tmp.index(y, cols.index[t], 0);
        for (int c = 0; c < kChannels; ++c) acc[c] += w * tmp.pixels[base + c];
      }
      for (int c = 0; c < kChannels; ++c) out.at(y, o, c) = acc[c];
    }
  }
  return out;
}

Image apply_separable_adjoint(const Image& grad, const ResampleAxis& rows, const ResampleAxis& cols) {
  if (rows.out_size != grad.height || cols.out_size != grad.width) {
    throw std::invalid_argument("apply_separable_adjoint: axis/gradient size mismatch");
  }
  Image tmp(rows.out_size, cols.in_size);
  for (int y = 0; y < rows.out_size; ++y) {
    for (int o = 0; o < cols.out_size; ++o) {
      const std::size_t g = grad.index(y, o, 0);
      for (int t = cols.row_begin[o]; t < cols.row_begin[o + 1]; ++t) {
        const double w = cols.weight[t];
        const std::size_t base = tmp.index(y, cols.index[t], 0);
        for (int c = 0; c < kChannels; ++c) tmp.pixels[base + c] += w * grad.pixels[g + c];
      }
    }
  }
  Image out(rows.in_size, cols.in_size);
  for (int o = 0; o < rows.out_size; ++o) {
    const double* src = &tmp.pixels[tmp.index(o, 0, 0)];
    for (int t = rows.row_begin[o]; t < rows.row_begin[o + 1]; ++t) {
      const double w = rows.weight[t];
      double* dst = &out.pixels[out.index(rows.index[t], 0, 0)];
      for (int n = 0; n < cols.in_size * kChannels; ++n) dst[n] += w * src[n];
    }
  }
  return out;
}

Image resample(const Image& img, int out_h, int out_w, int a) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("resample: output size must be positive (got " + std::to_string(out_h) +
                                "x" + std::to_string(out_w) + ")");
  }
  if (img.empty()) throw std::invalid_argument("resample: empty input");
  if (out_h == img.height && out_w == img.width) return img;
  return apply_separable(img, make_resize_axis(img.height, out_h, a), make_resize_axis(img.width, out_w, a));
}

Image square_crop(const Image& img, int top, int left, int size) {
  if (size < 1 || top < 0 || left < 0 || top + size > img.height || left + size > img.width) {
    throw std::invalid_argument("square_crop: region (" + std::to_string(top) + ", " + std::to_string(left) +
                                ", " + std::to_string(size) + ") exceeds " + std::to_string(img.height) +
                                "x" + std::to_string(img.width) + " image");
  }
  Image out(size, size);
  for (int y = 0; y < size; ++y) {
    std::copy_n(&img.pixels[img.index(top + y, left, 0)], static_cast<std::size_t>(size) * kChannels,
                &out.pixels[out.index(y, 0, 0)]);
  }
  return out;
}

namespace {

constexpr double kCoverageSlack = 1e-9;

// Base-frame pixel range covered by a patch centred at `centre`, and the
// patch-index positions of those pixel centres.
struct CoveredRange {
  int first = 0;
  std::vector<double> positions;
};

CoveredRange covered_range(double centre, int s, int p) {
  const double half = 0.5 * static_cast<double>(p) * p / s;  // in base pixels
  const double lo = centre * p - half;
  const double hi = centre * p + half;
  const double ratio = static_cast<double>(s) / p;
  CoveredRange r;
  r.first = -1;
  for (int i = 0; i < p; ++i) {
    const double c = i + 0.5;
    if (c < lo - kCoverageSlack || c > hi + kCoverageSlack) continue;
    if (r.first < 0) r.first = i;
    r.positions.push_back((c - lo) * ratio - 0.5);
  }
  if (r.first < 0) r.first = 0;
  return r;
}

}  // namespace

BaseWarp::BaseWarp(const PatchSpec& spec, int a) : p_(spec.p) {
  validate(spec);
  const CoveredRange ry = covered_range(spec.v.y, spec.s, spec.p);
  const CoveredRange rx = covered_range(spec.v.x, spec.s, spec.p);
  row0_ = ry.first;
  col0_ = rx.first;
  const double scale = static_cast<double>(spec.p) / spec.s;
  rows_ = make_axis(spec.p, ry.positions, scale, a);
  cols_ = make_axis(spec.p, rx.positions, scale, a);
  mask_.assign(static_cast<std::size_t>(p_) * p_, 0);
  for (int i = 0; i < rows_.out_size; ++i) {
    for (int j = 0; j < cols_.out_size; ++j) {
      mask_[static_cast<std::size_t>(row0_ + i) * p_ + col0_ + j] = 1;
    }
  }
}

MaskedImage BaseWarp::apply(const Image& patch) const {
  if (patch.height != p_ || patch.width != p_) throw std::invalid_argument("BaseWarp: patch must be p x p");
  MaskedImage out{Image(p_, p_), mask_};
  if (rows_.out_size == 0 || cols_.out_size == 0) return out;
  const Image block = apply_separable(patch, rows_, cols_);
  for (int i = 0; i < block.height; ++i) {
    std::copy_n(&block.pixels[block.index(i, 0, 0)], static_cast<std::size_t>(block.width) * kChannels,
                &out.image.pixels[out.image.index(row0_ + i, col0_, 0)]);
  }
  return out;
}

Image BaseWarp::adjoint(const Image& grad_base) const {
  if (grad_base.height != p_ || grad_base.width != p_) {
    throw std::invalid_argument("BaseWarp: gradient must be p x p");
  }
  if (rows_.out_size == 0 || cols_.out_size == 0) return Image(p_, p_);
  Image block(rows_.out_size, cols_.out_size);
  for (int i = 0; i < block.height; ++i) {
    std::copy_n(&grad_base.pixels[grad_base.index(row0_ + i, col0_, 0)],
                static_cast<std::size_t>(block.width) * kChannels, &block.pixels[block.index(i, 0, 0)]);
  }
  return apply_separable_adjoint(block, rows_, cols_);
}

MaskedImage warp_to_base(const Image& patch, const PatchSpec& spec) { return BaseWarp(spec).apply(patch); }

}  // namespace anyres
