#pragma once

#include <span>
#include <vector>

#include "anyres/geometry.hpp"
#include "anyres/image.hpp"

namespace anyres {

inline constexpr int kLanczosSupport = 3;

/// sinc(x) * sinc(x/a) on |x| < a, zero elsewhere (normalized sinc). Exactly
/// zero at nonzero integers so integer-aligned resampling is a pure copy.
double lanczos_kernel(double x, int a = kLanczosSupport);

/// One axis of a separable resampling operator, stored as CSR rows over input
/// indices. Taps that fall outside the input are clamped to the edge pixel and
/// each row is normalized to sum to one.
struct ResampleAxis {
  int in_size = 0;
  int out_size = 0;
  std::vector<int> row_begin;  // out_size + 1 entries
  std::vector<int> index;
  std::vector<double> weight;
};

/// positions[o] is the output sample location in input pixel units (input
/// pixel k is centred at k). `scale` is output/input sample density; below one
/// the kernel is widened by 1/scale to band-limit the result.
ResampleAxis make_axis(int in_size, std::span<const double> positions, double scale,
                       int a = kLanczosSupport);

/// Full-extent resize from in_size to out_size samples.
ResampleAxis make_resize_axis(int in_size, int out_size, int a = kLanczosSupport);

/// Applies rows then columns. The result is (rows.out_size x cols.out_size).
Image apply_separable(const Image& img, const ResampleAxis& rows, const ResampleAxis& cols);

/// Adjoint of apply_separable; maps an output-sized gradient back to input size.
Image apply_separable_adjoint(const Image& grad, const ResampleAxis& rows, const ResampleAxis& cols);

/// Separable Lanczos resize. Equal sizes return the input unchanged.
Image resample(const Image& img, int out_h, int out_w, int a = kLanczosSupport);

/// Exact copy of [top, top+size) x [left, left+size).
Image square_crop(const Image& img, int top, int left, int size);

/// Axis-aligned projection of a patch generated at spec into the p x p frame
/// of the global (s = p) view, with a binary validity mask.
///
/// The patch covers [v - p/(2s), v + p/(2s)]^2. A base pixel is valid iff its
/// centre lies in that range (closed). Valid pixels are Lanczos-resampled from
/// the patch by factor p/s; all others are zero. The map is linear in the
/// patch, and `adjoint` is its transpose for backpropagation.
class BaseWarp {
 public:
  explicit BaseWarp(const PatchSpec& spec, int a = kLanczosSupport);

  MaskedImage apply(const Image& patch) const;
  Image adjoint(const Image& grad_base) const;

  const std::vector<std::uint8_t>& mask() const { return mask_; }
  int p() const { return p_; }

 private:
  int p_;
  int row0_, col0_;
  ResampleAxis rows_, cols_;
  std::vector<std::uint8_t> mask_;
};

MaskedImage warp_to_base(const Image& patch, const PatchSpec& spec);

}  // namespace anyres
