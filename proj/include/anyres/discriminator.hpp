#pragma once

#include <cstdint>
#include <vector>

#include "anyres/image.hpp"
#include "anyres/nn.hpp"

namespace anyres {

struct DiscriminatorConfig {
  int p = 64;
  int base_channels = 16;
  int max_channels = 64;
  double slope = nn::kLeakySlope;  // negative-side activation slope; 1 makes D linear
  std::uint64_t seed = 0;
};

/// Fixed-resolution, scale-blind p x p critic:
///   stem 3x3 conv -> [3x3 conv, 2x2 avg-pool] until 4x4 -> dense -> dense -> logit.
/// All convolutions are zero-padded; activations are leaky ReLU.
class Discriminator {
 public:
  explicit Discriminator(const DiscriminatorConfig& config);

  const DiscriminatorConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  double logit(const Image& img) const;

  /// Logit at img; accumulates dlogit * dD/dparams into param_grads and writes
  /// dlogit * dD/dimg into input_grad when they are non-null.
  double forward_backward(const Image& img, double dlogit, nn::ParamSet* param_grads, Image* input_grad) const;

  struct R1 {
    double penalty = 0.0;  // ||dD/dx||^2
    Image input_grad;      // dD/dx
  };

  /// R1 penalty at img. When param_grads is non-null, adds
  /// coeff * d(penalty)/dparams. The parameter gradient is exact: it is the
  /// mixed second derivative obtained by running the backward pass on dual
  /// numbers along the direction dD/dx.
  R1 r1(const Image& img, double coeff, nn::ParamSet* param_grads) const;

  template <class T>
  class Pass;

 private:
  struct Conv {
    int weight = -1, bias = -1;
    int cin = 0, cout = 0;
    bool pool = false;
  };
  struct Dense {
    int weight = -1, bias = -1;
    int in = 0, out = 0;
  };

  DiscriminatorConfig config_;
  nn::ParamSet params_;
  std::vector<Conv> convs_;
  Dense hidden_, head_;
  int final_side_ = 0;
};

}  // namespace anyres
