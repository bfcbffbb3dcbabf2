#pragma once

// Minimal dense/conv building blocks with hand-written backward passes.
//
// Layouts: activations are row-major (pixels x channels); conv weights are
// (k*k*cin) x cout with rows ordered (dy, dx, ci), matching im2col columns.
// Everything is templated on the scalar so the discriminator can also run on
// dual numbers (forward-mode over reverse-mode, used for the R1 gradient).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace anyres::nn {

inline constexpr double kLeakySlope = 0.2;

/// First-order dual number v + d*eps with eps^2 = 0.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  constexpr Dual(double value, double deriv = 0.0) : v(value), d(deriv) {}

  Dual& operator+=(Dual o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(Dual o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(Dual o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  friend Dual operator+(Dual a, Dual b) { return a += b; }
  friend Dual operator-(Dual a, Dual b) { return a -= b; }
  friend Dual operator*(Dual a, Dual b) { return a *= b; }
  friend Dual operator-(Dual a) { return {-a.v, -a.d}; }
};

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

template <class T>
T leaky(T x) {
  return value_of(x) > 0.0 ? x : x * T(kLeakySlope);
}

/// Derivative factor of leaky() at pre-activation x. Piecewise constant, so
/// it carries no dual part.
template <class T>
double leaky_slope(T x) {
  return value_of(x) > 0.0 ? 1.0 : kLeakySlope;
}

// C (m x n) = op(A) * op(B), or += when accumulate. op(A) is m x k.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const Dual* a, const Dual* b, Dual* c,
          bool accumulate);

/// Patches of a (h x w x c) map into rows of k*k*c values. Output map is
/// (h + 2*pad - k + 1) squared-ish; zero padding.
template <class T>
void im2col(const T* x, int h, int w, int c, int k, int pad, std::vector<T>& cols);

/// Adjoint of im2col, accumulated into gx (h x w x c).
template <class T>
void col2im_add(const T* cols, int h, int w, int c, int k, int pad, T* gx);

/// 2x2 average pooling of an (h x w x c) map; h, w even.
template <class T>
void avg_pool2(const T* x, int h, int w, int c, std::vector<T>& out);
template <class T>
void avg_pool2_backward(const T* g, int h, int w, int c, T* gx);

// ---- parameters ---------------------------------------------------------------

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

/// Ordered, named collection of parameter tensors. Gradients, optimizer
/// moments and checkpoints all use the same layout.
class ParamSet {
 public:
  int add(std::string name, std::vector<int> shape, double fill = 0.0);

  Param& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(params_.size()); }
  const std::vector<Param>& all() const { return params_; }
  std::vector<Param>& all() { return params_; }
  int find(const std::string& name) const;  // -1 when absent
  double* data(int i) { return params_[static_cast<std::size_t>(i)].data.data(); }
  const double* data(int i) const { return params_[static_cast<std::size_t>(i)].data.data(); }

  ParamSet zeros_like() const;
  void set_zero();
  void add_scaled(const ParamSet& other, double k);
  void scale(double k);
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;
  std::size_t element_count() const;
  /// FNV-1a over names, shapes and raw bytes.
  std::uint64_t hash() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<Param> params_;
};

/// Adam with per-tensor first and second moments.
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet& like, double lr, double beta1, double beta2, double eps = 1e-8);

  void step(ParamSet& params, const ParamSet& grads);

  double lr = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::int64_t t = 0;
  ParamSet m;
  ParamSet v;
};

}  // namespace anyres::nn
