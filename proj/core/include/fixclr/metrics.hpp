#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fixclr/data.hpp"
#include "fixclr/model.hpp"
#include "fixclr/pseudo_label.hpp"

namespace fixclr::metrics {

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_c = 0.0;      // weighted contribution to total
  double loss_c_raw = 0.0;  // regularizer value before loss_weight
  double total = 0.0;       // loss_s + loss_u + loss_c
  double lr = 0.0;
  double keep_ratio = 0.0;
  std::int64_t forward_pass_count = 0;
  bool fixclr_skipped = false;
};

struct EpochRow {
  int epoch = 0;  // 1-based
  double target_accuracy = 0.0;
  std::optional<double> pl_quality;  // nullopt: nothing kept
  double pl_keep_ratio = 0.0;
  double domain_probe_accuracy = 0.0;
  double mean_loss_s = 0.0;
  double mean_loss_u = 0.0;
  double mean_loss_c = 0.0;
  double epoch_seconds = 0.0;
  std::int64_t forward_pass_total = 0;
};

struct RunMetrics {
  std::vector<EpochRow> epochs;
  std::vector<StepRecord> steps;
};

// metrics.csv columns, in order:
//   epoch,target_accuracy,pl_quality,pl_keep_ratio,domain_probe_accuracy,
//   mean_loss_s,mean_loss_u,mean_loss_c,epoch_seconds,forward_pass_total
// An undefined pl_quality is written as "nan".
void write_epoch_csv(const std::filesystem::path& path, std::span<const EpochRow> rows);
std::vector<EpochRow> read_epoch_csv(const std::filesystem::path& path);

// steps.csv columns, in order:
//   step,epoch,loss_s,loss_u,loss_c,loss_c_raw,total,lr,keep_ratio,
//   forward_pass_count,fixclr_skipped
void write_step_csv(const std::filesystem::path& path, std::span<const StepRecord> rows);
std::vector<StepRecord> read_step_csv(const std::filesystem::path& path);

// Argmax (ties to lowest index) accuracy. DomainError when empty.
double accuracy(const Eigen::MatrixXd& logits, std::span<const int> truth);

// Accuracy on un-augmented samples.
double target_accuracy(const model::Model& model, const data::MultiDomainDataset& ds,
                       std::span<const std::size_t> indices);

Eigen::MatrixXd gather_features(const data::MultiDomainDataset& ds,
                                std::span<const std::size_t> indices);

struct EmbeddingRow {
  data::SampleId sample_id = 0;
  int domain_id = 0;
  int class_id = 0;
  int pseudo_label = -1;  // -1 when not pseudo-labeled or not kept
  std::vector<double> coords;
};

struct EmbeddingDump {
  std::vector<EmbeddingRow> rows;
  int dim() const { return rows.empty() ? 0 : static_cast<int>(rows.front().coords.size()); }
};

// Projected coordinates of the given samples. With a policy, kept
// pseudo-labels of the clean view fill the pseudo_label column.
EmbeddingDump build_embedding_dump(const model::Model& model, const data::MultiDomainDataset& ds,
                                   std::span<const std::size_t> indices,
                                   const pseudo::ThresholdPolicy* policy = nullptr);

// Embedding file: CSV with header
//   sample_id,domain_id,class_id,pseudo_label,z0,...,z{P-1}
// one row per sample in the given order; reals with 17 significant digits.
void write_embedding_dump(const std::filesystem::path& path, const EmbeddingDump& dump);
EmbeddingDump read_embedding_dump(const std::filesystem::path& path);

EmbeddingDump export_embeddings(const model::Model& model, const data::MultiDomainDataset& ds,
                                std::span<const std::size_t> indices,
                                const std::filesystem::path& path,
                                const pseudo::ThresholdPolicy* policy = nullptr);

enum class ProbeKind { linear, centroid };

struct ProbeConfig {
  ProbeKind kind = ProbeKind::linear;
  int folds = 5;
  std::uint64_t seed = 0;
  double l2 = 1e-4;
  int max_iterations = 500;
  double tolerance = 1e-6;  // gradient-norm stopping rule for the linear probe
};

std::string to_string(ProbeKind k);
ProbeKind probe_kind_from_string(const std::string& s);

/// Cross-validated accuracy of predicting domain_id from coordinates.
/// linear: multinomial logistic regression on fold-standardized features,
/// fit with accelerated gradient descent. centroid: nearest standardized
/// domain mean. Lower means more domain-invariant; chance is 1/D on
/// balanced dumps.
double domain_probe_accuracy(const EmbeddingDump& dump, const ProbeConfig& cfg);

// Multinomial logistic regression used by the linear probe. Exposed for tests.
struct SoftmaxClassifier {
  Eigen::MatrixXd weights;  // (features + 1) x classes, last row is the bias
  int iterations = 0;
  double gradient_norm = 0.0;

  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
};

SoftmaxClassifier fit_softmax_classifier(const Eigen::MatrixXd& x, std::span<const int> labels,
                                         int num_classes, const ProbeConfig& cfg);

// ---- reports -------------------------------------------------------------

// Final-epoch metrics of one run, averaged over its target domains.
struct RunSummary {
  std::string method;
  std::string benchmark;  // runs compared in one report must match
  std::uint64_t seed = 0;
  std::vector<int> targets;
  EpochRow final_row;
};

// Averages the last epoch row of each target's metrics.
RunSummary summarize_run(const std::string& method, const std::string& benchmark,
                         std::uint64_t seed, std::span<const int> targets,
                         std::span<const RunMetrics> per_target);

struct MetricStats {
  int count = 0;  // runs with a defined value
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct ReportRow {
  std::string method;
  int runs = 0;
  std::vector<MetricStats> stats;  // parallel to report_metric_names()
};

struct Report {
  std::string benchmark;
  std::vector<ReportRow> rows;  // methods in first-seen order

  const ReportRow& row(const std::string& method) const;
};

const std::vector<std::string>& report_metric_names();

// Per-method mean / median / range over runs. DataError on mismatched
// benchmarks, DomainError on an empty list.
Report report(std::span<const RunSummary> runs);

// columns: method,runs,then <metric>_mean,<metric>_median,<metric>_min,<metric>_max
void write_report_csv(const std::filesystem::path& path, const Report& rep);
std::string format_report_table(const Report& rep);

}  // namespace fixclr::metrics
