#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "anyres/discriminator.hpp"
#include "anyres/geometry.hpp"
#include "anyres/image.hpp"

namespace anyres {

double softplus(double x);
double sigmoid(double x);

struct NonsatLosses {
  double loss_d = 0.0;  // softplus(-real) + softplus(fake)
  double loss_g = 0.0;  // softplus(-fake)
};

NonsatLosses nonsat_losses(double real_logit, double fake_logit);

/// ||dD/dx||^2 at x. The training objective weights it by lambda_R1 / 2.
double r1_penalty(const Discriminator& d, const Image& x);

/// Image distance with a gradient with respect to the first argument.
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual double distance(const Image& a, const Image& b, Image* grad_a) const = 0;
};

/// Squared feature differences of a fixed, seeded two-stage random
/// convolutional network (3x3 conv + leaky ReLU, pool, 3x3 conv + leaky ReLU),
/// averaged per stage and summed over stages.
class RandomConvPerceptual final : public PerceptualDistance {
 public:
  explicit RandomConvPerceptual(std::uint64_t seed = 7, int width = 8);
  double distance(const Image& a, const Image& b, Image* grad_a) const override;

 private:
  struct Stage {
    int cin, cout;
    std::vector<double> weight, bias;
  };
  struct Activations {
    std::vector<std::vector<double>> cols, pre, out;
    std::vector<int> side;
  };
  Activations run(const Image& img) const;
  Stage stages_[2];
};

struct TeacherWeights {
  double l1 = 1.0;
  double perc = 1.0;
};

struct TeacherLoss {
  double value = 0.0;
  double l1 = 0.0;
  double perc = 0.0;
  std::size_t covered = 0;  // valid base pixels
  Image grad_patch;         // d(value)/d(patch), only when requested
};

/// Distance between the patch projected into the global frame and the
/// teacher's global view, restricted to the pixels the patch covers:
///   w_l1 * mean |m (W patch - teacher)| + w_perc * perc(m W patch, m teacher),
/// the mean running over valid pixels and channels. No covered pixels gives 0.
TeacherLoss teacher_loss(const Image& patch, const PatchSpec& spec, const Image& teacher_base,
                         const TeacherWeights& weights, const PerceptualDistance* perceptual, bool want_grad);

}  // namespace anyres
