#include "fixclr/augment.hpp"

#include <cmath>
#include <numeric>

#include "fixclr/error.hpp"

namespace fixclr::augment {

void AugmentationPolicy::validate() const {
  if (!(noise_std >= 0.0)) throw ConfigError("augmentation noise_std must be >= 0");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) {
    throw ConfigError("augmentation mask_fraction must lie in [0, 1)");
  }
  if (kind == AugmentKind::weak && mask_fraction != 0.0) {
    throw ConfigError("weak augmentation does not mask coordinates");
  }
}

void AugmentationPair::validate() const {
  weak.validate();
  strong.validate();
  if (weak.kind != AugmentKind::weak || strong.kind != AugmentKind::strong) {
    throw ConfigError("augmentation pair kinds must be (weak, strong)");
  }
  if (strong.noise_std < weak.noise_std) {
    throw ConfigError("strong noise_std must be >= weak noise_std");
  }
  // Masked coordinates may already sit near zero, so only the unmasked
  // share of the strong noise counts toward dominance.
  const double unmasked = 1.0 - strong.mask_fraction;
  if (unmasked * strong.noise_std * strong.noise_std < weak.noise_std * weak.noise_std) {
    throw ConfigError("strong view must dominate: (1 - mask_fraction) * strong_noise^2 >= "
                      "weak_noise^2");
  }
}

std::vector<double> weak_augment(std::span<const double> x, const AugmentationPolicy& policy,
                                 Rng& rng) {
  if (policy.kind != AugmentKind::weak) throw ConfigError("weak_augment needs a weak policy");
  std::vector<double> out(x.begin(), x.end());
  if (policy.noise_std > 0.0) {
    for (double& v : out) v += policy.noise_std * rng.normal();
  }
  return out;
}

std::vector<double> strong_augment(std::span<const double> x, const AugmentationPolicy& policy,
                                   Rng& rng) {
  if (policy.kind != AugmentKind::strong) {
    throw ConfigError("strong_augment needs a strong policy");
  }
  std::vector<double> out(x.begin(), x.end());
  if (policy.noise_std > 0.0) {
    for (double& v : out) v += policy.noise_std * rng.normal();
  }
  const auto masked =
      static_cast<std::size_t>(std::floor(policy.mask_fraction * static_cast<double>(out.size())));
  if (masked > 0) {
    // Partial Fisher-Yates: the first `masked` entries of a shuffled index list.
    std::vector<std::size_t> idx(out.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < masked; ++i) {
      const std::size_t j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
      out[idx[i]] = 0.0;
    }
  }
  return out;
}

std::vector<double> apply(std::span<const double> x, const AugmentationPolicy& policy, Rng& rng) {
  return policy.kind == AugmentKind::weak ? weak_augment(x, policy, rng)
                                          : strong_augment(x, policy, rng);
}

}  // namespace fixclr::augment
