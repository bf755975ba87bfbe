#pragma once

#include <span>
#include <vector>

#include "fixclr/rng.hpp"

namespace fixclr::augment {

enum class AugmentKind { weak, strong };

// Synthetic-mode augmentation: additive Gaussian noise, plus coordinate
// masking for the strong view. Image-mode magnitudes live behind
// ImageAugmenter and are implementation-defined.
struct AugmentationPolicy {
  AugmentKind kind = AugmentKind::weak;
  double noise_std = 0.0;
  double mask_fraction = 0.0;  // strong only, in [0, 1)

  void validate() const;
};

struct AugmentationPair {
  AugmentationPolicy weak{AugmentKind::weak, 0.1, 0.0};
  AugmentationPolicy strong{AugmentKind::strong, 0.4, 0.25};

  // noise_std_strong >= noise_std_weak >= 0 and mask in [0, 1).
  void validate() const;
};

std::vector<double> weak_augment(std::span<const double> x, const AugmentationPolicy& policy,
                                 Rng& rng);

// Noise first, then exactly floor(mask_fraction * F) distinct coordinates
// set to zero.
std::vector<double> strong_augment(std::span<const double> x, const AugmentationPolicy& policy,
                                   Rng& rng);

std::vector<double> apply(std::span<const double> x, const AugmentationPolicy& policy, Rng& rng);

// Adapter for image-mode datasets. Implementations must keep the strong
// view's expected pixel MSE at or above the weak view's.
class ImageAugmenter {
 public:
  virtual ~ImageAugmenter() = default;
  virtual std::vector<float> weak(std::span<const float> pixels, int height, int width,
                                  int channels, Rng& rng) const = 0;
  virtual std::vector<float> strong(std::span<const float> pixels, int height, int width,
                                    int channels, Rng& rng) const = 0;
};

}  // namespace fixclr::augment
