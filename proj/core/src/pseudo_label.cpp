#include "fixclr/pseudo_label.hpp"

#include <cmath>

#include "fixclr/error.hpp"

namespace fixclr::pseudo {

std::size_t PseudoLabelBatch::kept() const {
  std::size_t n = 0;
  for (bool k : keep_mask) n += k ? 1 : 0;
  return n;
}

void ThresholdPolicy::validate() const {
  if (kind == ThresholdKind::fixed) {
    if (!(fixed_value > 0.0 && fixed_value <= 1.0)) {
      throw ConfigError("threshold value must lie in (0, 1]");
    }
  } else if (!plugin) {
    throw ConfigError("threshold plugin '" + plugin_id + "' is not instantiated");
  }
  if (history_length < 0) throw ConfigError("threshold history_length must be >= 0");
}

PluginRegistry& PluginRegistry::instance() {
  static PluginRegistry registry;
  return registry;
}

void PluginRegistry::add(const std::string& id, Factory factory) {
  factories_[id] = std::move(factory);
}

std::shared_ptr<ThresholdPlugin> PluginRegistry::create(const std::string& id) const {
  auto it = factories_.find(id);
  if (it == factories_.end()) throw ConfigError("no threshold plugin registered as '" + id + "'");
  return it->second();
}

bool PluginRegistry::contains(const std::string& id) const {
  return factories_.count(id) != 0;
}

PseudoLabelBatch predict_pseudo_labels(const Eigen::MatrixXd& logits,
                                       const ThresholdPolicy& policy,
                                       std::span<const Eigen::MatrixXd> history,
                                       std::int64_t step) {
  if (!logits.allFinite()) throw NumericError("pseudo-labeling: non-finite logits");
  const auto n = static_cast<std::size_t>(logits.rows());
  PseudoLabelBatch out;
  out.predicted_class.resize(n);
  out.confidence.resize(n);
  out.keep_mask.resize(n);
  out.weight.assign(n, 1.0);

  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = static_cast<int>(k);
    }
    double denom = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) denom += std::exp(logits(i, k) - logits(i, best));
    out.predicted_class[static_cast<std::size_t>(i)] = best;
    out.confidence[static_cast<std::size_t>(i)] = 1.0 / denom;
  }

  if (policy.kind == ThresholdKind::fixed) {
    out.threshold_used = policy.fixed_value;
  } else {
    if (!policy.plugin) throw ConfigError("threshold plugin is not instantiated");
    PluginDecision d = policy.plugin->decide(logits, history, step);
    if (!(d.threshold > 0.0 && d.threshold <= 1.0)) {
      throw ConfigError("threshold plugin returned a threshold outside (0, 1]");
    }
    out.threshold_used = d.threshold;
    if (!d.weights.empty()) {
      if (d.weights.size() != n) throw ConfigError("threshold plugin returned wrong weight count");
      out.weight = std::move(d.weights);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.keep_mask[i] = out.confidence[i] >= out.threshold_used;
  }
  return out;
}

double keep_ratio(const PseudoLabelBatch& batch) {
  if (batch.size() == 0) throw DomainError("keep_ratio of an empty batch");
  return static_cast<double>(batch.kept()) / static_cast<double>(batch.size());
}

std::optional<double> pseudo_label_quality(const PseudoLabelBatch& batch,
                                           std::span<const int> truth) {
  if (truth.size() != batch.size()) {
    throw DomainError("pseudo_label_quality: truth length does not match batch");
  }
  std::size_t kept = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch.keep_mask[i]) continue;
    ++kept;
    if (batch.predicted_class[i] == truth[i]) ++correct;
  }
  if (kept == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(kept);
}

}  // namespace fixclr::pseudo
