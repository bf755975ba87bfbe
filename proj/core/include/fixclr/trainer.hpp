#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>


#include "fixclr/augment.hpp"
#include "fixclr/data.hpp"
#include "fixclr/fixclr_loss.hpp"
#include "fixclr/metrics.hpp"
#include "fixclr/model.hpp"
#include "fixclr/pseudo_label.hpp"
#include "fixclr/rng.hpp"

namespace fixclr::train {

enum class Regularizer { none, fixclr, fixclr_with_positives };
// Which vectors the regularizer sees: the normalized projection head
// output, or the L2-normalized encoder representation.
enum class FeatureSource { projection, representation };

std::string to_string(Regularizer r);
Regularizer regularizer_from_string(const std::string& s);
std::string to_string(FeatureSource f);
FeatureSource feature_source_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 20;
  int steps_per_epoch = 0;  // 0: ceil(|unlabeled| / (mu * batch_size))
  double base_lr = 0.003;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 48;
  int mu = 1;
  std::uint64_t seed = 0;
  Regularizer regularizer = Regularizer::fixclr;
  FeatureSource features = FeatureSource::projection;
  loss::FixClrConfig fixclr;
  pseudo::ThresholdPolicy threshold;
  augment::AugmentationPair augmentation;
  // input_dim and num_classes are taken from the dataset.
  model::Architecture architecture;
  metrics::ProbeConfig probe;
  int probe_every = 1;  // epochs between domain probes; the last epoch is always probed
  bool ema = false;     // reserved; must stay false

  void validate() const;
};

// FixCLR settings with the variant implied by the regularizer selection.
loss::FixClrConfig effective_fixclr(const TrainConfig& cfg);

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)). DomainError outside
// 0 <= step <= total_steps or for total_steps < 1.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

// SGD with heavy-ball momentum and coupled L2 weight decay:
//   g <- grad + weight_decay * theta; v <- momentum * v + g; theta -= lr * v
class SgdMomentum {
 public:
  SgdMomentum() = default;
  explicit SgdMomentum(Eigen::Index size) : velocity_(Eigen::VectorXd::Zero(size)) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr, double momentum,
            double weight_decay);

  const Eigen::VectorXd& velocity() const { return velocity_; }
  Eigen::VectorXd& velocity() { return velocity_; }

 private:
  Eigen::VectorXd velocity_;
};

// Counts every sample pushed through the model.
class CountingForward {
 public:
  explicit CountingForward(const model::Model& model) : model_(model) {}

  model::ForwardBatch operator()(const Eigen::MatrixXd& inputs) {
    count_ += inputs.rows();
    return model_.forward(inputs);
  }
  std::int64_t count() const { return count_; }

 private:
  const model::Model& model_;
  std::int64_t count_ = 0;
};

// Mutable state carried across steps and epochs.
struct TrainState {
  model::Model model;
  SgdMomentum optimizer;
  int completed_epochs = 0;
  std::int64_t global_step = 0;
  std::deque<Eigen::MatrixXd> logit_history;  // for threshold plugins
  metrics::RunMetrics metrics;
};

TrainState initial_state(const data::MultiDomainDataset& ds, const TrainConfig& cfg);

struct StepInputs {
  const data::MultiDomainDataset& dataset;
  const data::MixedBatch& batch;
  std::int64_t step = 0;
  std::int64_t total_steps = 1;
  int epoch = 1;
};

/// One optimization step: supervised CE on weak labeled views, masked CE on
/// strong unlabeled views against weak-view pseudo-labels, the regularizer,
/// then one SGD update at the scheduled rate. Throws NumericError with a
/// diagnostic snapshot when the loss is not finite.
metrics::StepRecord train_step(TrainState& state, const StepInputs& in, const TrainConfig& cfg,
                               Rng& rng);

std::int64_t resolve_steps_per_epoch(const data::SplitSpec& split, const TrainConfig& cfg);

// Per-epoch evaluation used by fit(); none of it produces gradients.
struct EpochEvaluation {
  double target_accuracy = 0.0;
  std::optional<double> pl_quality;
  double pl_keep_ratio = 0.0;
  std::optional<double> domain_probe_accuracy;
};

EpochEvaluation evaluate_epoch(const model::Model& model, const data::MultiDomainDataset& ds,
                               const data::SplitSpec& split, const TrainConfig& cfg,
                               bool run_probe);

struct FitOptions {
  std::optional<TrainState> resume;               // continue from a saved state
  std::function<void(const TrainState&)> on_epoch_end;
  int stop_after_epoch = 0;                       // > 0: return early after that epoch
};

struct FitResult {
  TrainState state;
  metrics::RunMetrics& metrics() { return state.metrics; }
  const model::Model& model() const { return state.model; }
};

FitResult fit(const data::MultiDomainDataset& ds, const data::SplitSpec& split,
              const TrainConfig& cfg, FitOptions options = {});


}  // namespace fixclr::train
