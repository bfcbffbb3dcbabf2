#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anyres/geometry.hpp"
#include "anyres/image.hpp"
#include "anyres/nn.hpp"
#include "anyres/rng.hpp"

namespace anyres {

enum class SynthesisKernel { pointwise, conv3x3 };

std::string to_string(SynthesisKernel k);
SynthesisKernel kernel_from_string(const std::string& s);

struct GeneratorConfig {
  int p = 64;
  int z_dim = 64;
  int fourier_channels = 64;
  double fourier_bandwidth = 8.0;  // cycles per unit domain
  int layers = 6;                  // modulated synthesis layers before toRGB
  int channels = 128;
  int mapping_layers = 2;
  int mapping_width = 64;
  SynthesisKernel kernel = SynthesisKernel::pointwise;
  int s_max = 0;  // normalization ceiling for the scale input; must exceed p
  std::uint64_t seed = 0;
};

using LatentCode = std::vector<double>;

LatentCode sample_latent(int dim, Rng& rng);

/// Per-layer modulation vectors, one per modulated layer (synthesis layers
/// followed by the toRGB layer).
struct ModulationParams {
  std::vector<std::vector<double>> layers;
};

/// G(z, c, s) = G(F(c); M(z, s)).
///
/// Every modulated layer k scales its input features by
///   m_k = (Wz_k * Mz(z) + bz_k) + (Ws_k * Ms(s_bar) + bs_k).
/// The scale branch is off during fixed-resolution pretraining; turning it on
/// zeroes Ws_k and bs_k, so outputs are unchanged until training moves them.
class Generator {
 public:
  explicit Generator(const GeneratorConfig& config);

  const GeneratorConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  const FourierBasis& basis() const { return basis_; }

  bool scale_branch() const { return scale_branch_; }
  void enable_scale_branch();
  /// Restores the flag without touching weights (checkpoint loading).
  void set_scale_branch_flag(bool on) { scale_branch_ = on; }
  void set_basis(FourierBasis basis);

  /// Pixels of context lost per side by the synthesis stack (0 for 1x1).
  int margin() const;
  int modulated_layers() const { return config_.layers + 1; }

  std::vector<double> map_latent(std::span<const double> z) const;
  std::vector<double> map_scale(double s_bar) const;
  ModulationParams modulation(std::span<const double> z, double s_bar) const;
  double scale_input(int s) const;

  Image synthesize_patch(std::span<const double> z, const PatchSpec& spec) const;

  /// Full [0,1]^2 domain at out_res x out_res, assembled from p x p tiles at
  /// s = out_res. Edge tiles are shifted inward and cropped.
  Image synthesize_image(std::span<const double> z, int out_res) const;

  /// The same image in a single pass over an out_res lattice.
  Image synthesize_monolithic(std::span<const double> z, int out_res) const;

  /// Runs the synthesis stack on an explicit grid (margins included); the
  /// output covers the grid minus margin() pixels per side.
  Image render_grid(const ModulationParams& mod, const CoordinateGrid& grid) const;

  struct Trace {
    LatentCode z_unit;
    double z_norm = 1.0;
    double s_bar = 0.0;
    std::vector<std::vector<double>> map_z_pre, map_z_in;
    std::vector<std::vector<double>> map_s_pre, map_s_in;
    std::vector<double> w_z, w_s;
    ModulationParams mod;
    std::vector<int> side;                   // spatial side of each layer input
    std::vector<std::vector<double>> input;  // unmodulated input of each layer
    std::vector<std::vector<double>> pre;    // pre-activation of each synthesis layer
  };

  Image forward(std::span<const double> z, const PatchSpec& spec, Trace& trace) const;
  /// Accumulates dL/dparams into grads given dL/d(output image).
  void backward(const Trace& trace, const Image& grad_out, nn::ParamSet& grads) const;

 private:
  struct Dense {
    int weight = -1;
    int bias = -1;
    int in = 0;
    int out = 0;
  };
  struct ModLayer {
    int wz = -1, bz = -1, ws = -1, bs = -1;
    int width = 0;
  };

  std::vector<double> run_mlp(const std::vector<Dense>& mlp, std::vector<double> x,
                              std::vector<std::vector<double>>* pre,
                              std::vector<std::vector<double>>* in) const;
  void mlp_backward(const std::vector<Dense>& mlp, const std::vector<std::vector<double>>& pre,
                    const std::vector<std::vector<double>>& in, std::vector<double> grad,
                    nn::ParamSet& grads) const;
  ModulationParams modulation_from(const std::vector<double>& w_z, const std::vector<double>* w_s) const;
  Image run_synthesis(const ModulationParams& mod, std::vector<double> features, int side, Trace* trace) const;
  LatentCode normalized(std::span<const double> z, double* norm) const;

  GeneratorConfig config_;
  FourierBasis basis_;
  nn::ParamSet params_;
  bool scale_branch_ = false;
  std::vector<Dense> map_z_, map_s_;
  std::vector<ModLayer> mods_;
  std::vector<Dense> synth_;  // last entry is toRGB
};

}  // namespace anyres
