#pragma once

#include "fixclr/data.hpp"
#include "fixclr/trainer.hpp"

namespace fixclr::testing {

// Small 4-domain problem that trains in well under a second.
inline data::SyntheticConfig tiny_synthetic(std::uint64_t seed = 5) {
  data::SyntheticConfig c;
  c.num_domains = 4;
  c.num_classes = 3;
  c.feature_dim = 8;
  c.samples_per_domain_class = 16;
  c.seed = seed;
  c.domain_transforms = data::make_domain_transforms(4, 8, 0.5, 3.0, 0.1, seed);
  return c;
}

inline train::TrainConfig tiny_train(train::Regularizer reg = train::Regularizer::fixclr) {
  train::TrainConfig t;
  t.epochs = 2;
  t.steps_per_epoch = 3;
  t.batch_size = 12;
  t.mu = 1;
  t.seed = 9;
  t.regularizer = reg;
  t.architecture.input_dim = 8;
  t.architecture.num_classes = 3;
  t.architecture.hidden_dim = 16;
  t.architecture.representation_dim = 16;
  t.architecture.projection_hidden_dim = 16;
  t.architecture.projection_dim = 8;
  t.threshold.fixed_value = 0.5;
  t.probe.folds = 3;
  t.probe.max_iterations = 100;
  return t;
}

}  // namespace fixclr::testing
