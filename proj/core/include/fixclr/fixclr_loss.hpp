#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fixclr::loss {

enum class Variant { repel_only, with_positives };
enum class SimilarityMode { centroid, mean_pairwise };

struct FixClrConfig {
  double temperature = 0.5;
  double loss_weight = 1.0;
  Variant variant = Variant::repel_only;
  SimilarityMode similarity = SimilarityMode::centroid;

  void validate() const;
};

std::string to_string(Variant v);
std::string to_string(SimilarityMode m);
Variant variant_from_string(const std::string& s);
SimilarityMode similarity_from_string(const std::string& s);

/// Eq. operands for one batch. Rows of `vectors` are unit vectors; samples
/// with eligible[s] == false are ignored everywhere. Class ids are the
/// ground truth for labeled samples and the pseudo-label for kept
/// unlabeled samples.
struct RepresentationBatch {
  Eigen::MatrixXd vectors;
  std::vector<int> domain_ids;
  std::vector<int> class_ids;
  std::vector<bool> eligible;
  int num_domains = 0;
  int num_classes = 0;

  std::size_t size() const { return domain_ids.size(); }
  // Shape and range checks; DomainError on violation.
  void validate() const;
};

// a.b / (|a||b|) clamped to [-1, 1]. DomainError for a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Group centroids: class_centroid[j] over eligible class-j samples of any
/// domain; domain_minus[i][j] over eligible domain-i samples whose class is
/// not j; domain_same[i][j] over eligible domain-i class-j samples. Each is
/// the normalized mean, or nullopt when the group is empty or its mean has
/// norm below kDegenerateNorm.
struct GroupCentroids {
  static constexpr double kDegenerateNorm = 1e-12;

  std::vector<std::optional<Eigen::VectorXd>> class_centroid;
  std::vector<std::vector<std::optional<Eigen::VectorXd>>> domain_minus;
  std::vector<std::vector<std::optional<Eigen::VectorXd>>> domain_same;
  // Groups that had members but a vanishing mean.
  int degenerate_groups = 0;
};

GroupCentroids group_centroids(const RepresentationBatch& batch);

struct DomainTerm {
  int domain = 0;
  double value = 0.0;
  int pairs = 0;  // (DOM_minus, CLS) pairs in the inner sum
};

struct LossResult {
  double value = 0.0;
  bool skipped = false;           // fewer than 2 eligible classes
  Eigen::MatrixXd grad;           // d value / d vectors, same shape as batch.vectors
  std::vector<DomainTerm> terms;  // one per contributing domain, ascending
};

// Per-domain building blocks, exposed for testing the sign of their partials.
struct TermWithPartials {
  double value = 0.0;
  double d_positive = 0.0;
  std::vector<double> d_negatives;
};

// log sum_j exp(s_j / tau) - 1 / tau
TermWithPartials repel_term(std::span<const double> negative_sims, double temperature);
// -log( exp(p/tau) / (exp(p/tau) + sum_j exp(s_j/tau)) )
TermWithPartials positive_term(double positive_sim, std::span<const double> negative_sims,
                               double temperature);

// Repel-only regularizer; requires cfg.variant == repel_only.
LossResult fixclr_loss(const RepresentationBatch& batch, const FixClrConfig& cfg);
// Ablation with same-class attraction; requires cfg.variant == with_positives.
LossResult fixclr_loss_with_positives(const RepresentationBatch& batch, const FixClrConfig& cfg);
// Dispatches on cfg.variant.
LossResult evaluate(const RepresentationBatch& batch, const FixClrConfig& cfg);

struct OracleResult {
  double value = 0.0;
  bool skipped = false;
};

// Scalar-loop recomputation of the selected variant; for n <= 512.
OracleResult fixclr_oracle(const RepresentationBatch& batch, const FixClrConfig& cfg);

}  // namespace fixclr::loss
