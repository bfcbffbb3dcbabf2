#include "anyres/generator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace anyres {

std::string to_string(SynthesisKernel k) { return k == SynthesisKernel::pointwise ? "1x1" : "3x3"; }

SynthesisKernel kernel_from_string(const std::string& s) {
  if (s == "1x1") return SynthesisKernel::pointwise;
  if (s == "3x3") return SynthesisKernel::conv3x3;
  throw std::invalid_argument("unknown synthesis kernel '" + s + "' (expected 1x1 or 3x3)");
}

LatentCode sample_latent(int dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentCode z(dim);
  for (double& x : z) x = normal(rng);
  return z;
}

namespace {

void fill_normal(std::vector<double>& v, double std, Rng& rng) {
  std::normal_distribution<double> normal(0.0, std);
  for (double& x : v) x = normal(rng);
}

}  // namespace

Generator::Generator(const GeneratorConfig& config) : config_(config) {
  const auto& c = config_;
  if (c.p < 1 || c.z_dim < 1 || c.fourier_channels < 1 || c.layers < 1 || c.channels < 1 ||
      c.mapping_layers < 1 || c.mapping_width < 1) {
    throw std::invalid_argument("generator config: all sizes must be positive");
  }
  if (c.s_max <= c.p) throw std::invalid_argument("generator config: s_max must exceed p");

  basis_ = FourierBasis::random(c.fourier_channels, c.fourier_bandwidth, derive_seed(c.seed, "generator/basis"));
  Rng rng = make_rng(c.seed, "generator/init");

  auto add_mlp = [&](const std::string& prefix, int in_dim, std::vector<Dense>& mlp) {
    int in = in_dim;
    for (int l = 0; l < c.mapping_layers; ++l) {
      Dense d;
      d.in = in;
      d.out = c.mapping_width;
      const std::string base = prefix + "." + std::to_string(l);
      d.weight = params_.add(base + ".weight", {d.in, d.out});
      d.bias = params_.add(base + ".bias", {d.out});
      // The first layer sees a unit-norm (or scalar) input.
      fill_normal(params_[d.weight].data, l == 0 ? 1.0 : std::sqrt(2.0 / in), rng);
      mlp.push_back(d);
      in = d.out;
    }
  };
  add_mlp("map_z", c.z_dim, map_z_);
  add_mlp("map_s", 1, map_s_);

  const int ksize = c.kernel == SynthesisKernel::conv3x3 ? 3 : 1;
  for (int k = 0; k <= c.layers; ++k) {
    const int width = k == 0 ? c.fourier_channels : c.channels;
    const std::string base = "mod." + std::to_string(k);
    ModLayer m;
    m.width = width;
    m.wz = params_.add(base + ".wz", {c.mapping_width, width});
    m.bz = params_.add(base + ".bz", {width}, 1.0);
    m.ws = params_.add(base + ".ws", {c.mapping_width, width});
    m.bs = params_.add(base + ".bs", {width});
    fill_normal(params_[m.wz].data, 1.0 / std::sqrt(static_cast<double>(c.mapping_width)), rng);
    mods_.push_back(m);
  }
  for (int k = 0; k < c.layers; ++k) {
    const int cin = k == 0 ? c.fourier_channels : c.channels;
    Dense d;
    d.in = ksize * ksize * cin;
    d.out = c.channels;
    const std::string base = "synth." + std::to_string(k);
    d.weight = params_.add(base + ".weight", {d.in, d.out});
    d.bias = params_.add(base + ".bias", {d.out});
    fill_normal(params_[d.weight].data, std::sqrt(2.0 / d.in), rng);
    synth_.push_back(d);
  }
  Dense rgb;
  rgb.in = c.channels;
  rgb.out = kChannels;
  rgb.weight = params_.add("rgb.weight", {rgb.in, rgb.out});
  rgb.bias = params_.add("rgb.bias", {rgb.out}, 0.5);
  fill_normal(params_[rgb.weight].data, 0.5 / std::sqrt(static_cast<double>(rgb.in)), rng);
  synth_.push_back(rgb);
}

void Generator::enable_scale_branch() {
  for (const auto& m : mods_) {
    std::fill(params_[m.ws].data.begin(), params_[m.ws].data.end(), 0.0);
    std::fill(params_[m.bs].data.begin(), params_[m.bs].data.end(), 0.0);
  }
  scale_branch_ = true;
}

void Generator::set_basis(FourierBasis basis) {
  if (basis.channels() != config_.fourier_channels) {
    throw std::invalid_argument("Fourier basis channel count does not match the generator");
  }
  basis_ = std::move(basis);
}

int Generator::margin() const { return config_.kernel == SynthesisKernel::conv3x3 ? config_.layers : 0; }

double Generator::scale_input(int s) const { return normalize_scale(s, config_.p, config_.s_max); }

LatentCode Generator::normalized(std::span<const double> z, double* norm) const {
  if (static_cast<int>(z.size()) != config_.z_dim) {
    throw std::invalid_argument("latent dimension " + std::to_string(z.size()) + " != " +
                                std::to_string(config_.z_dim));
  }
  double n2 = 0.0;
  for (double x : z) n2 += x * x;
  const double n = std::sqrt(n2);
  if (!(n > 0.0)) throw std::invalid_argument("latent code has zero norm");
  LatentCode out(z.begin(), z.end());
  for (double& x : out) x /= n;
  if (norm) *norm = n;
  return out;
}

std::vector<double> Generator::run_mlp(const std::vector<Dense>& mlp, std::vector<double> x,
                                       std::vector<std::vector<double>>* pre,
                                       std::vector<std::vector<double>>* in) const {
  for (const Dense& d : mlp) {
    std::vector<double> y(params_[d.bias].data);
    nn::gemm(false, false, 1, d.out, d.in, x.data(), params_.data(d.weight), y.data(), true);
    if (in) in->push_back(x);
    if (pre) pre->push_back(y);
    for (double& v : y) v = nn::leaky(v);
    x = std::move(y);
  }
  return x;
}

void Generator::mlp_backward(const std::vector<Dense>& mlp, const std::vector<std::vector<double>>& pre,
                             const std::vector<std::vector<double>>& in, std::vector<double> grad,
                             nn::ParamSet& grads) const {
  for (int l = static_cast<int>(mlp.size()) - 1; l >= 0; --l) {
    const Dense& d = mlp[static_cast<std::size_t>(l)];
    for (int j = 0; j < d.out; ++j) grad[j] *= nn::leaky_slope(pre[l][j]);
    nn::gemm(true, false, d.in, d.out, 1, in[l].data(), grad.data(), grads.data(d.weight), true);
    double* gb = grads.data(d.bias);
    for (int j = 0; j < d.out; ++j) gb[j] += grad[j];
    if (l == 0) break;
    std::vector<double> gx(d.in, 0.0);
    nn::gemm(false, true, 1, d.in, d.out, grad.data(), params_.data(d.weight), gx.data(), false);
    grad = std::move(gx);
  }
}

std::vector<double> Generator::map_latent(std::span<const double> z) const {
  return run_mlp(map_z_, normalized(z, nullptr), nullptr, nullptr);
}

std::vector<double> Generator::map_scale(double s_bar) const { return run_mlp(map_s_, {s_bar}, nullptr, nullptr); }

ModulationParams Generator::modulation_from(const std::vector<double>& w_z, const std::vector<double>* w_s) const {
  const int wd = config_.mapping_width;
  ModulationParams mod;
  mod.layers.reserve(mods_.size());
  std::vector<double> zpart, spart;
  for (const ModLayer& m : mods_) {
    zpart.assign(m.width, 0.0);
    nn::gemm(false, false, 1, m.width, wd, w_z.data(), params_.data(m.wz), zpart.data(), false);
    const double* bz = params_.data(m.bz);
    for (int i = 0; i < m.width; ++i) zpart[i] += bz[i];
    if (w_s) {
      spart.assign(m.width, 0.0);
      nn::gemm(false, false, 1, m.width, wd, w_s->data(), params_.data(m.ws), spart.data(), false);
      const double* bs = params_.data(m.bs);
      for (int i = 0; i < m.width; ++i) zpart[i] += spart[i] + bs[i];
    }
    mod.layers.push_back(zpart);
  }
  return mod;
}

ModulationParams Generator::modulation(std::span<const double> z, double s_bar) const {
  const auto w_z = map_latent(z);
  if (!scale_branch_) return modulation_from(w_z, nullptr);
  const auto w_s = map_scale(s_bar);
  return modulation_from(w_z, &w_s);
}

Image Generator::run_synthesis(const ModulationParams& mod, std::vector<double> h, int side, Trace* trace) const {
  const bool conv = config_.kernel == SynthesisKernel::conv3x3;
  std::vector<double> hm, cols;
  for (std::size_t k = 0; k + 1 < synth_.size(); ++k) {
    const Dense& d = synth_[k];
    const auto& m = mod.layers[k];
    const int cin = mods_[k].width;
    const std::size_t npix = static_cast<std::size_t>(side) * side;
    hm.resize(h.size());
    for (std::size_t n = 0; n < npix; ++n) {
      for (int c = 0; c < cin; ++c) hm[n * cin + c] = h[n * cin + c] * m[c];
    }
    const int out_side = conv ? side - 2 : side;
    const int rows = out_side * out_side;
    std::vector<double> a(static_cast<std::size_t>(rows) * d.out);
    const double* b = params_.data(d.bias);
    for (int r = 0; r < rows; ++r) std::copy_n(b, d.out, a.data() + static_cast<std::size_t>(r) * d.out);
    if (conv) {
      nn::im2col(hm.data(), side, side, cin, 3, 0, cols);
      nn::gemm(false, false, rows, d.out, d.in, cols.data(), params_.data(d.weight), a.data(), true);
    } else {
      nn::gemm(false, false, rows, d.out, d.in, hm.data(), params_.data(d.weight), a.data(), true);
    }
    if (trace) {
      trace->side.push_back(side);
      trace->input.push_back(std::move(h));
      trace->pre.push_back(a);
    }
    for (double& v : a) v = nn::leaky(v);
    h = std::move(a);
    side = out_side;
  }
  // toRGB
  const Dense& rgb = synth_.back();
  const auto& m = mod.layers.back();
  const std::size_t npix = static_cast<std::size_t>(side) * side;
  hm.resize(h.size());
  for (std::size_t n = 0; n < npix; ++n) {
    for (int c = 0; c < rgb.in; ++c) hm[n * rgb.in + c] = h[n * rgb.in + c] * m[c];
  }
  Image out(side, side);
  const double* b = params_.data(rgb.bias);
  for (std::size_t n = 0; n < npix; ++n) std::copy_n(b, kChannels, out.pixels.data() + n * kChannels);
  nn::gemm(false, false, static_cast<int>(npix), kChannels, rgb.in, hm.data(), params_.data(rgb.weight),
           out.pixels.data(), true);
  if (trace) {
    trace->side.push_back(side);
    trace->input.push_back(std::move(h));
  }
  return out;
}

Image Generator::forward(std::span<const double> z, const PatchSpec& spec, Trace& trace) const {
  if (spec.p != config_.p) throw std::invalid_argument("patch size does not match the generator");
  const CoordinateGrid grid = patch_grid(spec, margin());
  trace = Trace{};
  trace.z_unit = normalized(z, &trace.z_norm);
  trace.w_z = run_mlp(map_z_, trace.z_unit, &trace.map_z_pre, &trace.map_z_in);
  if (scale_branch_) {
    trace.s_bar = scale_input(spec.s);
    trace.w_s = run_mlp(map_s_, {trace.s_bar}, &trace.map_s_pre, &trace.map_s_in);
    trace.mod = modulation_from(trace.w_z, &trace.w_s);
  } else {
    trace.mod = modulation_from(trace.w_z, nullptr);
  }
  return run_synthesis(trace.mod, fourier_embed(grid, basis_), grid.size, &trace);
}

void Generator::backward(const Trace& trace, const Image& grad_out, nn::ParamSet& grads) const {
  if (!grads.same_layout(params_)) throw std::invalid_argument("generator gradient layout mismatch");
  const bool conv = config_.kernel == SynthesisKernel::conv3x3;
  const std::size_t L = synth_.size();
  std::vector<std::vector<double>> gmod(L);

  // toRGB
  const Dense& rgb = synth_.back();
  {
    const int side = trace.side.back();
    const std::size_t npix = static_cast<std::size_t>(side) * side;
    if (grad_out.height != side || grad_out.width != side) {
      throw std::invalid_argument("generator backward: gradient size mismatch");
    }
    const auto& h = trace.input.back();
    const auto& m = trace.mod.layers.back();
    std::vector<double> hm(h.size());
    for (std::size_t n = 0; n < npix; ++n) {
      for (int c = 0; c < rgb.in; ++c) hm[n * rgb.in + c] = h[n * rgb.in + c] * m[c];
    }
    const int np = static_cast<int>(npix);
    nn::gemm(true, false, rgb.in, kChannels, np, hm.data(), grad_out.pixels.data(), grads.data(rgb.weight), true);
    double* gb = grads.data(rgb.bias);
    for (std::size_t n = 0; n < npix; ++n) {
      for (int c = 0; c < kChannels; ++c) gb[c] += grad_out.pixels[n * kChannels + c];
    }
    std::vector<double> ghm(h.size());
    nn::gemm(false, true, np, rgb.in, kChannels, grad_out.pixels.data(), params_.data(rgb.weight), ghm.data(),
             false);
    gmod[L - 1].assign(rgb.in, 0.0);
    std::vector<double> gh(h.size());
    for (std::size_t n = 0; n < npix; ++n) {
      for (int c = 0; c < rgb.in; ++c) {
        gmod[L - 1][c] += ghm[n * rgb.in + c] * h[n * rgb.in + c];
        gh[n * rgb.in + c] = ghm[n * rgb.in + c] * m[c];
      }
    }
    // Walk the synthesis layers backwards.
    std::vector<double> cols, gcols;
    for (int k = static_cast<int>(L) - 2; k >= 0; --k) {
      const Dense& d = synth_[static_cast<std::size_t>(k)];
      const auto& a = trace.pre[k];
      const auto& hin = trace.input[k];
      const auto& mk = trace.mod.layers[k];
      const int in_side = trace.side[k];
      const int out_side = conv ? in_side - 2 : in_side;
      const int rows = out_side * out_side;
      const int cin = mods_[static_cast<std::size_t>(k)].width;
      for (std::size_t i = 0; i < gh.size(); ++i) gh[i] *= nn::leaky_slope(a[i]);
      double* gbk = grads.data(d.bias);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < d.out; ++c) gbk[c] += gh[static_cast<std::size_t>(r) * d.out + c];
      }
      const std::size_t in_pix = static_cast<std::size_t>(in_side) * in_side;
      std::vector<double> hmk(in_pix * cin);
      for (std::size_t n = 0; n < in_pix; ++n) {
        for (int c = 0; c < cin; ++c) hmk[n * cin + c] = hin[n * cin + c] * mk[c];
      }
      std::vector<double> ghmk(in_pix * cin, 0.0);
      if (conv) {
        nn::im2col(hmk.data(), in_side, in_side, cin, 3, 0, cols);
        nn::gemm(true, false, d.in, d.out, rows, cols.data(), gh.data(), grads.data(d.weight), true);
        gcols.assign(cols.size(), 0.0);
        nn::gemm(false, true, rows, d.in, d.out, gh.data(), params_.data(d.weight), gcols.data(), false);
        nn::col2im_add(gcols.data(), in_side, in_side, cin, 3, 0, ghmk.data());
      } else {
        nn::gemm(true, false, d.in, d.out, rows, hmk.data(), gh.data(), grads.data(d.weight), true);
        nn::gemm(false, true, rows, d.in, d.out, gh.data(), params_.data(d.weight), ghmk.data(), false);
      }
      gmod[k].assign(cin, 0.0);
      std::vector<double> next(in_pix * cin);
      for (std::size_t n = 0; n < in_pix; ++n) {
        for (int c = 0; c < cin; ++c) {
          gmod[k][c] += ghmk[n * cin + c] * hin[n * cin + c];
          next[n * cin + c] = ghmk[n * cin + c] * mk[c];
        }
      }
      gh = std::move(next);  // gradient w.r.t. Fourier features is discarded at k = 0
    }
  }

  // Modulation affines and mapping networks.
  const int wd = config_.mapping_width;
  std::vector<double> gw_z(wd, 0.0), gw_s(wd, 0.0);
  for (std::size_t k = 0; k < mods_.size(); ++k) {
    const ModLayer& m = mods_[k];
    const auto& g = gmod[k];
    nn::gemm(true, false, wd, m.width, 1, trace.w_z.data(), g.data(), grads.data(m.wz), true);
    double* gbz = grads.data(m.bz);
    for (int i = 0; i < m.width; ++i) gbz[i] += g[i];
    nn::gemm(false, true, 1, wd, m.width, g.data(), params_.data(m.wz), gw_z.data(), true);
    if (scale_branch_) {
      nn::gemm(true, false, wd, m.width, 1, trace.w_s.data(), g.data(), grads.data(m.ws), true);
      double* gbs = grads.data(m.bs);
      for (int i = 0; i < m.width; ++i) gbs[i] += g[i];
      nn::gemm(false, true, 1, wd, m.width, g.data(), params_.data(m.ws), gw_s.data(), true);
    }
  }
  mlp_backward(map_z_, trace.map_z_pre, trace.map_z_in, gw_z, grads);
  if (scale_branch_) mlp_backward(map_s_, trace.map_s_pre, trace.map_s_in, gw_s, grads);
}

Image Generator::synthesize_patch(std::span<const double> z, const PatchSpec& spec) const {
  if (spec.p != config_.p) throw std::invalid_argument("patch size does not match the generator");
  const CoordinateGrid grid = patch_grid(spec, margin());
  return render_grid(modulation(z, scale_branch_ ? scale_input(spec.s) : 0.0), grid);
}

Image Generator::render_grid(const ModulationParams& mod, const CoordinateGrid& grid) const {
  if (grid.size - 2 * margin() < 1) throw std::invalid_argument("grid smaller than the synthesis margin");
  return run_synthesis(mod, fourier_embed(grid, basis_), grid.size, nullptr);
}

Image Generator::synthesize_image(std::span<const double> z, int out_res) const {
  const int p = config_.p;
  if (out_res < p) {
    throw std::invalid_argument("output resolution " + std::to_string(out_res) + " is below patch size " +
                                std::to_string(p));
  }
  const ModulationParams mod = modulation(z, scale_branch_ ? scale_input(out_res) : 0.0);
  Image out(out_res, out_res);
  for (int ty = 0; ty < out_res; ty += p) {
    const int oy = std::min(ty, out_res - p);
    for (int tx = 0; tx < out_res; tx += p) {
      const int ox = std::min(tx, out_res - p);
      const PatchSpec spec{out_res, {(ox + 0.5 * p) / out_res, (oy + 0.5 * p) / out_res}, p};
      const Image tile = render_grid(mod, patch_grid(spec, margin()));
      for (int y = ty; y < std::min(ty + p, out_res); ++y) {
        for (int x = tx; x < std::min(tx + p, out_res); ++x) {
          for (int c = 0; c < kChannels; ++c) out.at(y, x, c) = tile.at(y - oy, x - ox, c);
        }
      }
    }
  }
  return out;
}

Image Generator::synthesize_monolithic(std::span<const double> z, int out_res) const {
  if (out_res < config_.p) throw std::invalid_argument("output resolution is below patch size");
  const ModulationParams mod = modulation(z, scale_branch_ ? scale_input(out_res) : 0.0);
  return render_grid(mod, patch_grid(PatchSpec::global(out_res), margin()));
}

}  // namespace anyres
