#include "anyres/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "anyres/rng.hpp"

namespace anyres {

using nn::Dual;

Discriminator::Discriminator(const DiscriminatorConfig& config) : config_(config) {
  const int p = config_.p;
  if (p < 4) throw std::invalid_argument("discriminator input must be at least 4x4");
  if (!(config_.slope >= 0.0 && config_.slope <= 1.0)) throw std::invalid_argument("activation slope must be in [0, 1]");
  if (config_.base_channels < 1 || config_.max_channels < config_.base_channels) {
    throw std::invalid_argument("discriminator channel configuration is invalid");
  }
  Rng rng = make_rng(config_.seed, "discriminator/init");
  auto init = [&](int idx, double std) {
    std::normal_distribution<double> normal(0.0, std);
    for (double& x : params_[idx].data) x = normal(rng);
  };
  auto add_conv = [&](int cin, int cout, bool pool) {
    Conv c;
    c.cin = cin;
    c.cout = cout;
    c.pool = pool;
    const std::string base = "conv." + std::to_string(convs_.size());
    c.weight = params_.add(base + ".weight", {9 * cin, cout});
    c.bias = params_.add(base + ".bias", {cout});
    init(c.weight, std::sqrt(2.0 / (9 * cin)));
    convs_.push_back(c);
  };
  int side = p;
  int ch = config_.base_channels;
  add_conv(kChannels, ch, false);
  while (side > 4 && side % 2 == 0) {
    const int next = std::min(2 * ch, config_.max_channels);
    add_conv(ch, next, true);
    ch = next;
    side /= 2;
  }
  final_side_ = side;
  hidden_.in = side * side * ch;
  hidden_.out = ch;
  hidden_.weight = params_.add("hidden.weight", {hidden_.in, hidden_.out});
  hidden_.bias = params_.add("hidden.bias", {hidden_.out});
  init(hidden_.weight, std::sqrt(2.0 / hidden_.in));
  head_.in = ch;
  head_.out = 1;
  head_.weight = params_.add("head.weight", {head_.in, 1});
  head_.bias = params_.add("head.bias", {1});
  init(head_.weight, std::sqrt(1.0 / head_.in));
}

template <class T>
class Discriminator::Pass {
 public:
  explicit Pass(const Discriminator& net) : net_(net) {
    const auto& ps = net.params_;
    w_.resize(ps.size());
    for (int i = 0; i < ps.size(); ++i) {
      w_[i].assign(ps[i].data.begin(), ps[i].data.end());
    }
  }

  T forward(const std::vector<T>& img) {
    const int p = net_.config_.p;
    std::vector<T> x(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) x[i] = img[i] * T(2.0) - T(1.0);
    int side = p;
    int ch = kChannels;
    layers_.clear();
    for (const Conv& c : net_.convs_) {
      Cache cache;
      cache.in_side = side;
      if (c.pool) {
        std::vector<T> pooled;
        nn::avg_pool2(x.data(), side, side, ch, pooled);
        x = std::move(pooled);
        side /= 2;
      }
      cache.side = side;
      nn::im2col(x.data(), side, side, ch, 3, 1, cache.cols);
      const int rows = side * side;
      cache.pre.resize(static_cast<std::size_t>(rows) * c.cout);
      const auto& b = w_[c.bias];
      for (int r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), cache.pre.begin() + static_cast<std::ptrdiff_t>(r) * c.cout);
      nn::gemm(false, false, rows, c.cout, 9 * ch, cache.cols.data(), w_[c.weight].data(), cache.pre.data(), true);
      x.resize(cache.pre.size());
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = act(cache.pre[i]);
      ch = c.cout;
      layers_.push_back(std::move(cache));
    }
    flat_ = std::move(x);
    const Dense& h = net_.hidden_;
    hidden_pre_ = w_[h.bias];
    nn::gemm(false, false, 1, h.out, h.in, flat_.data(), w_[h.weight].data(), hidden_pre_.data(), true);
    hidden_act_.resize(hidden_pre_.size());
    for (std::size_t i = 0; i < hidden_pre_.size(); ++i) hidden_act_[i] = act(hidden_pre_[i]);
    const Dense& o = net_.head_;
    std::vector<T> out = w_[o.bias];
    nn::gemm(false, false, 1, 1, o.in, hidden_act_.data(), w_[o.weight].data(), out.data(), true);
    return out[0];
  }

  /// Returns dlogit * dD/dimg; accumulates parameter gradients into grads
  /// (same layout as the network parameters) when non-null.
  std::vector<T> backward(T dlogit, std::vector<std::vector<T>>* grads) {
    auto gw = [&](int idx) -> T* { return grads ? (*grads)[idx].data() : nullptr; };
    const Dense& o = net_.head_;
    const Dense& h = net_.hidden_;
    std::vector<T> g{dlogit};
    if (grads) {
      nn::gemm(true, false, o.in, 1, 1, hidden_act_.data(), g.data(), gw(o.weight), true);
      (*grads)[o.bias][0] += dlogit;
    }
    std::vector<T> gh(o.in, T(0.0));
    nn::gemm(false, true, 1, o.in, 1, g.data(), w_[o.weight].data(), gh.data(), false);
    for (std::size_t i = 0; i < gh.size(); ++i) gh[i] = gh[i] * T(act_slope(hidden_pre_[i]));
    if (grads) {
      nn::gemm(true, false, h.in, h.out, 1, flat_.data(), gh.data(), gw(h.weight), true);
      for (int i = 0; i < h.out; ++i) (*grads)[h.bias][i] += gh[i];
    }
    std::vector<T> gx(h.in, T(0.0));
    nn::gemm(false, true, 1, h.in, h.out, gh.data(), w_[h.weight].data(), gx.data(), false);

    std::vector<T> gcols;
    for (int l = static_cast<int>(net_.convs_.size()) - 1; l >= 0; --l) {
      const Conv& c = net_.convs_[static_cast<std::size_t>(l)];
      const Cache& cache = layers_[static_cast<std::size_t>(l)];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gx[i] * T(act_slope(cache.pre[i]));
      const int rows = cache.side * cache.side;
      if (grads) {
        nn::gemm(true, false, 9 * c.cin, c.cout, rows, cache.cols.data(), gx.data(), gw(c.weight), true);
        T* gb = gw(c.bias);
        for (int r = 0; r < rows; ++r) {
          for (int k = 0; k < c.cout; ++k) gb[k] += gx[static_cast<std::size_t>(r) * c.cout + k];
        }
      }
      gcols.assign(cache.cols.size(), T(0.0));
      nn::gemm(false, true, rows, 9 * c.cin, c.cout, gx.data(), w_[c.weight].data(), gcols.data(), false);
      std::vector<T> gin(static_cast<std::size_t>(rows) * c.cin, T(0.0));
      nn::col2im_add(gcols.data(), cache.side, cache.side, c.cin, 3, 1, gin.data());
      if (c.pool) {
        std::vector<T> up(static_cast<std::size_t>(cache.in_side) * cache.in_side * c.cin, T(0.0));
        nn::avg_pool2_backward(gin.data(), cache.in_side, cache.in_side, c.cin, up.data());
        gin = std::move(up);
      }
      gx = std::move(gin);
    }
    for (auto& v : gx) v = v * T(2.0);
    return gx;
  }

 private:
  T act(T x) const { return nn::value_of(x) > 0.0 ? x : x * T(net_.config_.slope); }
  double act_slope(T x) const { return nn::value_of(x) > 0.0 ? 1.0 : net_.config_.slope; }

  struct Cache {
    int in_side = 0;
    int side = 0;
    std::vector<T> cols;
    std::vector<T> pre;
  };

  const Discriminator& net_;
  std::vector<std::vector<T>> w_;
  std::vector<Cache> layers_;
  std::vector<T> flat_, hidden_pre_, hidden_act_;
};

namespace {

void check_input(const Image& img, int p) {
  if (img.height != p || img.width != p) {
    throw std::invalid_argument("discriminator expects " + std::to_string(p) + "x" + std::to_string(p) +
                                " input, got " + std::to_string(img.height) + "x" + std::to_string(img.width));
  }
}

std::vector<std::vector<double>> grad_buffers(const nn::ParamSet& ps) {
  std::vector<std::vector<double>> g(ps.size());
  for (int i = 0; i < ps.size(); ++i) g[i].assign(ps[i].data.size(), 0.0);
  return g;
}

}  // namespace

double Discriminator::logit(const Image& img) const {
  check_input(img, config_.p);
  Pass<double> pass(*this);
  return pass.forward(img.pixels);
}

double Discriminator::forward_backward(const Image& img, double dlogit, nn::ParamSet* param_grads,
                                       Image* input_grad) const {
  check_input(img, config_.p);
  Pass<double> pass(*this);
  const double out = pass.forward(img.pixels);
  if (!param_grads && !input_grad) return out;
  std::vector<std::vector<double>> g;
  if (param_grads) g = grad_buffers(params_);
  auto gx = pass.backward(dlogit, param_grads ? &g : nullptr);
  if (param_grads) {
    for (int i = 0; i < params_.size(); ++i) {
      double* dst = param_grads->data(i);
      for (std::size_t j = 0; j < g[i].size(); ++j) dst[j] += g[i][j];
    }
  }
  if (input_grad) {
    *input_grad = Image(config_.p, config_.p);
    input_grad->pixels = std::move(gx);
  }
  return out;
}

Discriminator::R1 Discriminator::r1(const Image& img, double coeff, nn::ParamSet* param_grads) const {
  check_input(img, config_.p);
  R1 result;
  {
    Pass<double> pass(*this);
    pass.forward(img.pixels);
    result.input_grad = Image(config_.p, config_.p);
    result.input_grad.pixels = pass.backward(1.0, nullptr);
  }
  for (double g : result.input_grad.pixels) result.penalty += g * g;
  if (!param_grads) return result;

  // d/dparams ||g||^2 = 2 * d/deps [dD/dparams](x + eps * g).
  std::vector<Dual> x(img.pixels.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = Dual(img.pixels[i], result.input_grad.pixels[i]);
  Pass<Dual> pass(*this);
  pass.forward(x);
  std::vector<std::vector<Dual>> g(params_.size());
  for (int i = 0; i < params_.size(); ++i) g[i].assign(params_[i].data.size(), Dual(0.0));
  pass.backward(Dual(1.0), &g);
  for (int i = 0; i < params_.size(); ++i) {
    double* dst = param_grads->data(i);
    for (std::size_t j = 0; j < g[i].size(); ++j) dst[j] += coeff * 2.0 * g[i][j].d;
  }
  return result;
}

}  // namespace anyres
