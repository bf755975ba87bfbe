#include <doctest.h>

#include <cmath>
#include <vector>

#include "fixclr/augment.hpp"
#include "fixclr/error.hpp"

using namespace fixclr;
using namespace fixclr::augment;

namespace {

const std::vector<double> kInput = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 3.0, -2.0};

double empirical_std(const AugmentationPolicy& p, int draws) {
  Rng rng(99);
  double sq = 0;
  long count = 0;
  for (int i = 0; i < draws; ++i) {
    const auto y = apply(kInput, p, rng);
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (y[k] == 0.0 && p.mask_fraction > 0) continue;
      sq += (y[k] - kInput[k]) * (y[k] - kInput[k]);
      ++count;
    }
  }
  return std::sqrt(sq / static_cast<double>(count));
}

}  // namespace

TEST_CASE("zero-noise weak augmentation is the identity") {
  Rng rng(1);
  CHECK(weak_augment(kInput, {AugmentKind::weak, 0.0, 0.0}, rng) == kInput);
}

TEST_CASE("augmentations are deterministic under a fixed seed") {
  const AugmentationPair pair;
  Rng a(5), b(5);
  CHECK(weak_augment(kInput, pair.weak, a) == weak_augment(kInput, pair.weak, b));
  CHECK(strong_augment(kInput, pair.strong, a) == strong_augment(kInput, pair.strong, b));
}

TEST_CASE("weak noise has the configured standard deviation") {
  const double s = empirical_std({AugmentKind::weak, 0.1, 0.0}, 10000);
  CHECK(std::abs(s - 0.1) < 0.005);
}

TEST_CASE("strong augmentation zeroes exactly floor(m * F) coordinates") {
  Rng rng(2);
  const AugmentationPolicy p{AugmentKind::strong, 0.0, 0.25};
  for (int i = 0; i < 100; ++i) {
    const auto y = strong_augment(kInput, p, rng);
    int zeros = 0;
    for (double v : y) zeros += v == 0.0;
    CHECK(zeros == 2);
  }
}

TEST_CASE("strong augmentation with no noise and no mask is the identity") {
  Rng rng(3);
  CHECK(strong_augment(kInput, {AugmentKind::strong, 0.0, 0.0}, rng) == kInput);
}

TEST_CASE("strong noise on unmasked coordinates has the configured deviation") {
  const double s = empirical_std({AugmentKind::strong, 0.4, 0.25}, 10000);
  CHECK(std::abs(s - 0.4) < 0.02);
}

TEST_CASE("strong views perturb more than weak views on average") {
  const AugmentationPair pair;
  Rng rng(8);
  double weak = 0, strong = 0;
  for (int i = 0; i < 5000; ++i) {
    const auto w = weak_augment(kInput, pair.weak, rng);
    const auto s = strong_augment(kInput, pair.strong, rng);
    for (std::size_t k = 0; k < kInput.size(); ++k) {
      weak += (w[k] - kInput[k]) * (w[k] - kInput[k]);
      strong += (s[k] - kInput[k]) * (s[k] - kInput[k]);
    }
  }
  CHECK(strong > weak);
}

TEST_CASE("shape is preserved") {
  const AugmentationPair pair;
  Rng rng(4);
  CHECK(weak_augment(kInput, pair.weak, rng).size() == kInput.size());
  CHECK(strong_augment(kInput, pair.strong, rng).size() == kInput.size());
}

TEST_CASE("policy invariants are enforced") {
  CHECK_THROWS_AS((AugmentationPolicy{AugmentKind::weak, -0.1, 0.0}.validate()), ConfigError);
  CHECK_THROWS_AS((AugmentationPolicy{AugmentKind::strong, 0.1, 1.0}.validate()), ConfigError);
  AugmentationPair pair;
  pair.strong.noise_std = 0.05;
  CHECK_THROWS_AS(pair.validate(), ConfigError);
  pair = AugmentationPair{};
  pair.strong.mask_fraction = 0.95;
  CHECK_THROWS_AS(pair.validate(), ConfigError);
  CHECK_NOTHROW(AugmentationPair{}.validate());
}

TEST_CASE("the wrong policy kind is rejected") {
  Rng rng(0);
  const AugmentationPair pair;
  CHECK_THROWS(weak_augment(kInput, pair.strong, rng));
  CHECK_THROWS(strong_augment(kInput, pair.weak, rng));
}
