#include "anyres/geometry.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "anyres/rng.hpp"

namespace anyres {

namespace {

// Slack for the containment test: centres computed as (offset + p/2) / s
// carry one rounding.
constexpr double kContainmentSlack = 1e-12;

}  // namespace

bool is_valid(const PatchSpec& spec) {
  if (spec.p < 1 || spec.s < spec.p) return false;
  const double half = 0.5 * spec.extent();
  auto inside = [&](double c) {
    return c >= half - kContainmentSlack && c <= 1.0 - half + kContainmentSlack;
  };
  return inside(spec.v.x) && inside(spec.v.y);
}

void validate(const PatchSpec& spec) {
  if (spec.p < 1) throw std::invalid_argument("patch size p must be >= 1");
  if (spec.s < spec.p) {
    throw std::invalid_argument("scale s=" + std::to_string(spec.s) +
                                " is smaller than patch size p=" + std::to_string(spec.p));
  }
  if (!is_valid(spec)) {
    throw std::invalid_argument("patch centre (" + std::to_string(spec.v.x) + ", " +
                                std::to_string(spec.v.y) + ") puts the patch outside [0,1]^2 at s=" +
                                std::to_string(spec.s));
  }
}

CoordinateGrid make_canonical_grid(int p, int margin) {
  if (p <= 0) throw std::invalid_argument("grid size must be positive");
  if (margin < 0) throw std::invalid_argument("grid margin must be non-negative");
  CoordinateGrid grid;
  grid.size = p + 2 * margin;
  grid.margin = margin;
  grid.frame = Frame::canonical;
  grid.coords.resize(static_cast<std::size_t>(grid.size) * grid.size);
  const double inv = 1.0 / p;
  for (int i = 0; i < grid.size; ++i) {
    const double y = (i - margin + 0.5) * inv - 0.5;
    for (int j = 0; j < grid.size; ++j) {
      grid.coords[static_cast<std::size_t>(i) * grid.size + j] = {(j - margin + 0.5) * inv - 0.5, y};
    }
  }
  return grid;
}

CoordinateGrid patch_grid(const PatchSpec& spec, int margin) {
  validate(spec);
  CoordinateGrid grid = make_canonical_grid(spec.p, margin);
  for (Vec2& c : grid.coords) c = patch_transform(spec, c);
  grid.frame = Frame::domain;
  return grid;
}

FourierBasis FourierBasis::random(int channels, double bandwidth, std::uint64_t seed) {
  if (channels < 1) throw std::invalid_argument("Fourier basis needs at least one channel");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("Fourier bandwidth must be positive");
  Rng rng = make_rng(seed, "fourier_basis");
  std::normal_distribution<double> normal(0.0, 0.5 * bandwidth);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  FourierBasis basis;
  basis.frequencies.reserve(channels);
  basis.phases.reserve(channels);
  while (static_cast<int>(basis.frequencies.size()) < channels) {
    Vec2 f{normal(rng), normal(rng)};
    if (std::hypot(f.x, f.y) > bandwidth) continue;
    basis.frequencies.push_back(f);
    basis.phases.push_back(phase(rng));
  }
  return basis;
}

std::vector<double> fourier_embed(const CoordinateGrid& grid, const FourierBasis& basis) {
  const std::size_t k = basis.frequencies.size();
  std::vector<double> out(grid.coords.size() * k);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t n = 0; n < grid.coords.size(); ++n) {
    const Vec2 c = grid.coords[n];
    double* row = out.data() + n * k;
    for (std::size_t q = 0; q < k; ++q) {
      const Vec2 f = basis.frequencies[q];
      row[q] = std::sin(two_pi * (f.x * c.x + f.y * c.y) + basis.phases[q]);
    }
  }
  return out;
}

double normalize_scale(int s, int p, int s_max) {
  if (s_max <= p) {
    throw std::invalid_argument("normalize_scale needs s_max > p (got s_max=" +
                                std::to_string(s_max) + ", p=" + std::to_string(p) + ")");
  }
  return 2.0 * static_cast<double>(s - p) / static_cast<double>(s_max - p) - 1.0;
}

std::array<double, 3> cylindrical_point(double theta, double y) {
  // Wrap the unit-interval position so that theta = -pi and theta = +pi land
  // on the same representative before any trigonometry happens.
  double t = theta / (2.0 * std::numbers::pi) + 0.5;
  t -= std::floor(t);
  const double a = 2.0 * std::numbers::pi * (t - 0.5);
  return {std::sin(a), std::cos(a), y};
}

std::vector<double> cylindrical_encode(const CoordinateGrid& grid) {
  std::vector<double> out(grid.coords.size() * 3);
  for (std::size_t n = 0; n < grid.coords.size(); ++n) {
    const Vec2 c = grid.coords[n];
    const auto e = cylindrical_point(2.0 * std::numbers::pi * (c.x - 0.5), c.y);
    out[3 * n + 0] = e[0];
    out[3 * n + 1] = e[1];
    out[3 * n + 2] = e[2];
  }
  return out;
}

}  // namespace anyres
