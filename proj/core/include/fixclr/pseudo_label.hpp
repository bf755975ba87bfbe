#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fixclr::pseudo {

struct PseudoLabelBatch {
  std::vector<int> predicted_class;
  std::vector<double> confidence;  // max softmax probability
  std::vector<bool> keep_mask;     // confidence >= threshold_used
  std::vector<double> weight;      // per-sample L_U weight; 1 for fixed thresholds
  double threshold_used = 0.95;

  std::size_t size() const { return predicted_class.size(); }
  std::size_t kept() const;
};

struct PluginDecision {
  double threshold = 0.95;
  std::vector<double> weights;  // empty means all ones
};

/// Hook for adaptive thresholding schemes. `history` holds previous weak-view
/// logit batches, oldest first; the current batch is passed separately.
/// Implementations own their state; the trainer calls them single-threaded.
class ThresholdPlugin {
 public:
  virtual ~ThresholdPlugin() = default;
  virtual std::string id() const = 0;
  virtual PluginDecision decide(const Eigen::MatrixXd& logits,
                                std::span<const Eigen::MatrixXd> history,
                                std::int64_t step) = 0;
};

enum class ThresholdKind { fixed, plugin };

struct ThresholdPolicy {
  ThresholdKind kind = ThresholdKind::fixed;
  double fixed_value = 0.95;
  std::string plugin_id;
  std::shared_ptr<ThresholdPlugin> plugin;
  int history_length = 0;  // logit batches retained for the plugin

  void validate() const;
};

// Process-wide factory table for plugins referenced by id in config files.
class PluginRegistry {
 public:
  using Factory = std::function<std::shared_ptr<ThresholdPlugin>()>;

  static PluginRegistry& instance();
  void add(const std::string& id, Factory factory);
  std::shared_ptr<ThresholdPlugin> create(const std::string& id) const;  // ConfigError if unknown
  bool contains(const std::string& id) const;

 private:
  std::map<std::string, Factory> factories_;
};

// Softmax per row, argmax with ties to the lowest index, then the policy's
// mask. Non-finite logits throw NumericError.
PseudoLabelBatch predict_pseudo_labels(const Eigen::MatrixXd& logits,
                                       const ThresholdPolicy& policy,
                                       std::span<const Eigen::MatrixXd> history = {},
                                       std::int64_t step = 0);

// Fraction kept. Throws DomainError for an empty batch.
double keep_ratio(const PseudoLabelBatch& batch);

// Accuracy over kept samples only; nullopt when nothing was kept. Reads
// ground truth, so the result is for reporting only.
std::optional<double> pseudo_label_quality(const PseudoLabelBatch& batch,
                                           std::span<const int> truth);

}  // namespace fixclr::pseudo
