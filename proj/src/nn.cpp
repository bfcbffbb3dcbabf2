#include "anyres/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "anyres/rng.hpp"

namespace anyres::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate) {
  MutMap cm(c, m, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
  ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      cm.noalias() += lhs * rhs;
    } else {
      cm.noalias() = lhs * rhs;
    }
  };
  if (trans_a && trans_b) run(am.transpose(), bm.transpose());
  else if (trans_a) run(am.transpose(), bm);
  else if (trans_b) run(am, bm.transpose());
  else run(am, bm);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const Dual* a, const Dual* b, Dual* c,
          bool accumulate) {
  // (Av + eps Ad)(Bv + eps Bd) = AvBv + eps (Ad Bv + Av Bd): three real GEMMs.
  const std::size_t na = static_cast<std::size_t>(m) * k;
  const std::size_t nb = static_cast<std::size_t>(k) * n;
  const std::size_t nc = static_cast<std::size_t>(m) * n;
  std::vector<double> av(na), ad(na), bv(nb), bd(nb), cv(nc), cd(nc);
  for (std::size_t i = 0; i < na; ++i) { av[i] = a[i].v; ad[i] = a[i].d; }
  for (std::size_t i = 0; i < nb; ++i) { bv[i] = b[i].v; bd[i] = b[i].d; }
  gemm(trans_a, trans_b, m, n, k, av.data(), bv.data(), cv.data(), false);
  gemm(trans_a, trans_b, m, n, k, ad.data(), bv.data(), cd.data(), false);
  gemm(trans_a, trans_b, m, n, k, av.data(), bd.data(), cd.data(), true);
  for (std::size_t i = 0; i < nc; ++i) {
    if (accumulate) {
      c[i].v += cv[i];
      c[i].d += cd[i];
    } else {
      c[i] = Dual(cv[i], cd[i]);
    }
  }
}

template <class T>
void im2col(const T* x, int h, int w, int c, int k, int pad, std::vector<T>& cols) {
  const int oh = h + 2 * pad - k + 1;
  const int ow = w + 2 * pad - k + 1;
  const int row_len = k * k * c;
  cols.assign(static_cast<std::size_t>(oh) * ow * row_len, T(0.0));
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* row = cols.data() + (static_cast<std::size_t>(oy) * ow + ox) * row_len;
      for (int dy = 0; dy < k; ++dy) {
        const int iy = oy + dy - pad;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int ix = ox + dx - pad;
          if (ix < 0 || ix >= w) continue;
          std::copy_n(x + (static_cast<std::size_t>(iy) * w + ix) * c, c, row + (dy * k + dx) * c);
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, int h, int w, int c, int k, int pad, T* gx) {
  const int oh = h + 2 * pad - k + 1;
  const int ow = w + 2 * pad - k + 1;
  const int row_len = k * k * c;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const T* row = cols + (static_cast<std::size_t>(oy) * ow + ox) * row_len;
      for (int dy = 0; dy < k; ++dy) {
        const int iy = oy + dy - pad;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int ix = ox + dx - pad;
          if (ix < 0 || ix >= w) continue;
          T* dst = gx + (static_cast<std::size_t>(iy) * w + ix) * c;
          const T* src = row + (dy * k + dx) * c;
          for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

template <class T>
void avg_pool2(const T* x, int h, int w, int c, std::vector<T>& out) {
  const int oh = h / 2;
  const int ow = w / 2;
  out.assign(static_cast<std::size_t>(oh) * ow * c, T(0.0));
  for (int y = 0; y < oh; ++y) {
    for (int xo = 0; xo < ow; ++xo) {
      T* dst = out.data() + (static_cast<std::size_t>(y) * ow + xo) * c;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const T* src = x + (static_cast<std::size_t>(2 * y + dy) * w + 2 * xo + dx) * c;
          for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
      for (int ci = 0; ci < c; ++ci) dst[ci] = dst[ci] * T(0.25);
    }
  }
}

template <class T>
void avg_pool2_backward(const T* g, int h, int w, int c, T* gx) {
  const int oh = h / 2;
  const int ow = w / 2;
  for (int y = 0; y < oh; ++y) {
    for (int xo = 0; xo < ow; ++xo) {
      const T* src = g + (static_cast<std::size_t>(y) * ow + xo) * c;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          T* dst = gx + (static_cast<std::size_t>(2 * y + dy) * w + 2 * xo + dx) * c;
          for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci] * T(0.25);
        }
      }
    }
  }
}

template void im2col<double>(const double*, int, int, int, int, int, std::vector<double>&);
template void im2col<Dual>(const Dual*, int, int, int, int, int, std::vector<Dual>&);
template void col2im_add<double>(const double*, int, int, int, int, int, double*);
template void col2im_add<Dual>(const Dual*, int, int, int, int, int, Dual*);
template void avg_pool2<double>(const double*, int, int, int, std::vector<double>&);
template void avg_pool2<Dual>(const Dual*, int, int, int, std::vector<Dual>&);
template void avg_pool2_backward<double>(const double*, int, int, int, double*);
template void avg_pool2_backward<Dual>(const Dual*, int, int, int, Dual*);

// ---- ParamSet -------------------------------------------------------------------

int ParamSet::add(std::string name, std::vector<int> shape, double fill) {
  if (find(name) >= 0) throw std::invalid_argument("duplicate parameter name " + name);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  params_.push_back({std::move(name), std::move(shape), std::vector<double>(n, fill)});
  return static_cast<int>(params_.size()) - 1;
}

int ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out = *this;
  out.set_zero();
  return out;
}

void ParamSet::set_zero() {
  for (auto& p : params_) std::fill(p.data.begin(), p.data.end(), 0.0);
}

void ParamSet::add_scaled(const ParamSet& other, double k) {
  if (!same_layout(other)) throw std::invalid_argument("ParamSet::add_scaled: layout mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i].data;
    const auto& src = other.params_[i].data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += k * src[j];
  }
}

void ParamSet::scale(double k) {
  for (auto& p : params_) {
    for (double& x : p.data) x *= k;
  }
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || params_[i].shape != other.params_[i].shape) return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& p : params_) {
    for (double x : p.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.data.size();
  return n;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = fnv1a("");
  for (const auto& p : params_) {
    h = fnv1a(p.name, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.shape.data()), p.shape.size() * sizeof(int)), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.data.data()), p.data.size() * sizeof(double)), h);
  }
  return h;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const auto& x = a.params_[i].data;
    const auto& y = b.params_[i].data;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

// ---- Adam -------------------------------------------------------------------------

Adam::Adam(const ParamSet& like, double lr_, double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_), m(like.zeros_like()), v(like.zeros_like()) {}

void Adam::step(ParamSet& params, const ParamSet& grads) {
  if (!params.same_layout(grads) || !params.same_layout(m)) {
    throw std::invalid_argument("Adam::step: layout mismatch");
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (int i = 0; i < params.size(); ++i) {
    double* w = params.data(i);
    const double* g = grads.data(i);
    double* mi = m.data(i);
    double* vi = v.data(i);
    const std::size_t n = params[i].data.size();
    for (std::size_t j = 0; j < n; ++j) {
      mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
      vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
      w[j] -= lr * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + eps);
    }
  }
}

}  // namespace anyres::nn
