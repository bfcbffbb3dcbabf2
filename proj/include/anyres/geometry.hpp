#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace anyres {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// Identifies a p x p window of the implicit s x s image centred at v.
/// v is in normalized units of the continuous domain [0,1]^2.
struct PatchSpec {
  int s = 0;
  Vec2 v{0.5, 0.5};
  int p = 0;

  /// Fraction of the domain covered per axis.
  double extent() const { return static_cast<double>(p) / s; }
  bool is_global() const { return s == p && v.x == 0.5 && v.y == 0.5; }

  static PatchSpec global(int p) { return {p, {0.5, 0.5}, p}; }
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

/// Throws std::invalid_argument unless s >= p >= 1 and the patch lies inside
/// [0,1]^2, i.e. v in [p/(2s), 1 - p/(2s)]^2.
void validate(const PatchSpec& spec);
bool is_valid(const PatchSpec& spec);

enum class Frame { canonical, domain };

/// Row-major (row i, column j) lattice of 2-D coordinates. x follows columns,
/// y follows rows. A margin extends the lattice by whole pixels on each side.
struct CoordinateGrid {
  int size = 0;    // pixels per side, including margins
  int margin = 0;  // extra pixels per side beyond the nominal patch
  Frame frame = Frame::canonical;
  std::vector<Vec2> coords;

  const Vec2& at(int i, int j) const { return coords[static_cast<std::size_t>(i) * size + j]; }
};

/// Pixel-centre lattice on [-0.5, 0.5]^2: entry (i, j) is
/// ((j + 0.5)/p - 0.5, (i + 0.5)/p - 0.5).
CoordinateGrid make_canonical_grid(int p, int margin = 0);

/// c' = (p/s) * c + v, the homogeneous T_patch applied to one point.
inline Vec2 patch_transform(const PatchSpec& spec, Vec2 c) {
  const double k = spec.extent();
  return {k * c.x + spec.v.x, k * c.y + spec.v.y};
}

/// Canonical grid mapped into the domain frame by patch_transform.
CoordinateGrid patch_grid(const PatchSpec& spec, int margin = 0);

/// Frozen random Fourier basis: F(c) = sin(2*pi*B*c + phi).
struct FourierBasis {
  std::vector<Vec2> frequencies;  // rows of B, cycles per unit domain
  std::vector<double> phases;     // phi, radians

  int channels() const { return static_cast<int>(frequencies.size()); }

  /// Isotropic Gaussian frequencies (std = bandwidth / 2), rejected beyond
  /// `bandwidth`; phases uniform on [0, 2*pi).
  static FourierBasis random(int channels, double bandwidth, std::uint64_t seed);
};

/// Returns a (size*size) x K row-major feature map.
std::vector<double> fourier_embed(const CoordinateGrid& grid, const FourierBasis& basis);

/// Affine remap of s from [p, s_max] to [-1, 1]. Values beyond s_max map past
/// +1 so inference can extrapolate.
double normalize_scale(int s, int p, int s_max);

/// Panorama encoding: x is read as theta / (2*pi) + 0.5 and mapped to
/// (sin theta, cos theta, y). Returns a (size*size) x 3 row-major map.
std::vector<double> cylindrical_encode(const CoordinateGrid& grid);

/// Encoding of a single (theta, y) pair; exact at theta = +-pi.
std::array<double, 3> cylindrical_point(double theta, double y);

}  // namespace anyres
