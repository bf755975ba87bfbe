#include "fixclr/fixclr_loss.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fixclr/error.hpp"

namespace fixclr::loss {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double log_sum_exp(std::span<const double> x, std::vector<double>* softmax) {
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - m);
  if (softmax) {
    softmax->resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) (*softmax)[k] = std::exp(x[k] - m) / sum;
  }
  return m + std::log(sum);
}

// Group layout inside the membership matrix: C class groups, then D*C
// domain-minus-class groups, then D*C domain-and-class groups.
struct Groups {
  int D = 0;
  int C = 0;
  MatrixXd weights;          // n x G, entry 1/|group| for members
  std::vector<int> counts;   // per group

  Index cls(int j) const { return j; }
  Index minus(int i, int j) const { return C + i * C + j; }
  Index same(int i, int j) const { return C + D * C + i * C + j; }
  Index total() const { return C + 2 * D * C; }
};

Groups build_groups(const RepresentationBatch& b) {
  Groups g;
  g.D = b.num_domains;
  g.C = b.num_classes;
  const auto n = static_cast<Index>(b.size());
  g.weights = MatrixXd::Zero(n, g.total());
  g.counts.assign(static_cast<std::size_t>(g.total()), 0);
  for (Index s = 0; s < n; ++s) {
    if (!b.eligible[static_cast<std::size_t>(s)]) continue;
    const int dom = b.domain_ids[static_cast<std::size_t>(s)];
    const int cls = b.class_ids[static_cast<std::size_t>(s)];
    g.weights(s, g.cls(cls)) = 1.0;
    g.weights(s, g.same(dom, cls)) = 1.0;
    for (int j = 0; j < g.C; ++j) {
      if (j != cls) g.weights(s, g.minus(dom, j)) = 1.0;
    }
  }
  for (Index k = 0; k < g.total(); ++k) {
    const double c = g.weights.col(k).sum();
    g.counts[static_cast<std::size_t>(k)] = static_cast<int>(c);
    if (c > 0.0) g.weights.col(k) /= c;
  }
  return g;
}

/// Similarity between two groups and the backward pass for it. Centroid
/// mode works on group means; pairwise mode averages a sample-level cosine
/// matrix.
class SimilarityEngine {
 public:
  SimilarityEngine(const RepresentationBatch& batch, const Groups& groups, SimilarityMode mode)
      : batch_(batch), groups_(groups), mode_(mode) {
    if (mode_ == SimilarityMode::centroid) {
      means_ = groups_.weights.transpose() * batch_.vectors;
      mean_norms_ = means_.rowwise().norm();
      dmeans_ = MatrixXd::Zero(means_.rows(), means_.cols());
    } else {
      const auto n = static_cast<Index>(batch_.size());
      unit_ = batch_.vectors;
      norms_ = batch_.vectors.rowwise().norm();
      for (Index s = 0; s < n; ++s) {
        if (!batch_.eligible[static_cast<std::size_t>(s)]) {
          unit_.row(s).setZero();
          continue;
        }
        if (norms_[s] == 0.0) throw DomainError("fixclr: zero representation vector");
        unit_.row(s) /= norms_[s];
      }
      cos_ = unit_ * unit_.transpose();
      clamped_ = (cos_.array().abs() > 1.0);
      cos_ = cos_.cwiseMax(-1.0).cwiseMin(1.0);
      dcos_ = MatrixXd::Zero(n, n);
    }
  }

  bool present(Index group) const {
    if (groups_.counts[static_cast<std::size_t>(group)] == 0) return false;
    if (mode_ == SimilarityMode::centroid) {
      return mean_norms_[group] >= GroupCentroids::kDegenerateNorm;
    }
    return true;
  }

  double similarity(Index a, Index b) const {
    if (mode_ == SimilarityMode::centroid) {
      double c = means_.row(a).dot(means_.row(b)) / (mean_norms_[a] * mean_norms_[b]);
      return std::clamp(c, -1.0, 1.0);
    }
    return groups_.weights.col(a).dot(cos_ * groups_.weights.col(b));
  }

  // Adds upstream * d sim(a, b) / d inputs to the pending gradient.
  void accumulate(Index a, Index b, double upstream) {
    if (upstream == 0.0) return;
    if (mode_ == SimilarityMode::centroid) {
      const double na = mean_norms_[a];
      const double nb = mean_norms_[b];
      const double raw = means_.row(a).dot(means_.row(b)) / (na * nb);
      if (std::abs(raw) > 1.0) return;  // clamped: flat
      dmeans_.row(a) += upstream * (means_.row(b) / (na * nb) - raw * means_.row(a) / (na * na));
      dmeans_.row(b) += upstream * (means_.row(a) / (na * nb) - raw * means_.row(b) / (nb * nb));
    } else {
      dcos_.noalias() += upstream * groups_.weights.col(a) * groups_.weights.col(b).transpose();
    }
  }

  MatrixXd input_gradient() const {
    if (mode_ == SimilarityMode::centroid) return groups_.weights * dmeans_;
    MatrixXd dk = clamped_.select(MatrixXd::Zero(dcos_.rows(), dcos_.cols()), dcos_);
    const MatrixXd dunit = (dk + dk.transpose()) * unit_;
    MatrixXd grad = MatrixXd::Zero(unit_.rows(), unit_.cols());
    for (Index s = 0; s < unit_.rows(); ++s) {
      if (!batch_.eligible[static_cast<std::size_t>(s)]) continue;
      const double along = unit_.row(s).dot(dunit.row(s));
      grad.row(s) = (dunit.row(s) - along * unit_.row(s)) / norms_[s];
    }
    return grad;
  }

 private:
  const RepresentationBatch& batch_;
  const Groups& groups_;
  SimilarityMode mode_;
  MatrixXd means_, dmeans_;
  VectorXd mean_norms_;
  MatrixXd unit_, cos_, dcos_;
  VectorXd norms_;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped_;
};

int eligible_class_count(const RepresentationBatch& b) {
  std::set<int> classes;
  for (std::size_t s = 0; s < b.size(); ++s) {
    if (b.eligible[s]) classes.insert(b.class_ids[s]);
  }
  return static_cast<int>(classes.size());
}

bool domain_has_samples(const Groups& g, int domain) {
  for (int j = 0; j < g.C; ++j) {
    if (g.counts[static_cast<std::size_t>(g.same(domain, j))] > 0) return true;
  }
  return false;
}

LossResult run(const RepresentationBatch& batch, const FixClrConfig& cfg, bool with_positives) {
  cfg.validate();
  batch.validate();
  if (!batch.vectors.allFinite()) throw NumericError("fixclr: non-finite representation");
  LossResult out;
  out.grad = MatrixXd::Zero(batch.vectors.rows(), batch.vectors.cols());
  if (eligible_class_count(batch) < 2) {
    out.skipped = true;
    return out;
  }

  const Groups groups = build_groups(batch);
  SimilarityEngine engine(batch, groups, cfg.similarity);

  for (int i = 0; i < groups.D; ++i) {
    if (!domain_has_samples(groups, i)) continue;
    std::vector<double> negatives;
    std::vector<int> negative_class;
    for (int j = 0; j < groups.C; ++j) {
      if (engine.present(groups.minus(i, j)) && engine.present(groups.cls(j))) {
        negatives.push_back(engine.similarity(groups.minus(i, j), groups.cls(j)));
        negative_class.push_back(j);
      }
    }

    TermWithPartials term;
    std::vector<int> positive_class;
    if (with_positives) {
      double p = 0.0;
      for (int j = 0; j < groups.C; ++j) {
        if (engine.present(groups.same(i, j)) && engine.present(groups.cls(j))) {
          p += engine.similarity(groups.same(i, j), groups.cls(j));
          positive_class.push_back(j);
        }
      }
      if (positive_class.empty()) continue;
      p /= static_cast<double>(positive_class.size());
      term = positive_term(p, negatives, cfg.temperature);
    } else {
      if (negatives.empty()) continue;
      term = repel_term(negatives, cfg.temperature);
    }

    for (std::size_t k = 0; k < negative_class.size(); ++k) {
      engine.accumulate(groups.minus(i, negative_class[k]), groups.cls(negative_class[k]),
                        term.d_negatives[k]);
    }
    for (int j : positive_class) {
      engine.accumulate(groups.same(i, j), groups.cls(j),
                        term.d_positive / static_cast<double>(positive_class.size()));
    }
    out.terms.push_back({i, term.value, static_cast<int>(negatives.size())});
    out.value += term.value;
  }
  out.grad = engine.input_gradient();
  return out;
}

}  // namespace

void FixClrConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("fixclr temperature must be > 0");
  }
  if (!(loss_weight >= 0.0)) throw ConfigError("fixclr loss_weight must be >= 0");
}

std::string to_string(Variant v) {
  return v == Variant::repel_only ? "repel_only" : "with_positives";
}

std::string to_string(SimilarityMode m) {
  return m == SimilarityMode::centroid ? "centroid" : "mean_pairwise";
}

Variant variant_from_string(const std::string& s) {
  if (s == "repel_only") return Variant::repel_only;
  if (s == "with_positives") return Variant::with_positives;
  throw ConfigError("unknown fixclr variant '" + s + "'");
}

SimilarityMode similarity_from_string(const std::string& s) {
  if (s == "centroid") return SimilarityMode::centroid;
  if (s == "mean_pairwise") return SimilarityMode::mean_pairwise;
  throw ConfigError("unknown similarity mode '" + s + "'");
}

void RepresentationBatch::validate() const {
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (domain_ids.size() != n || class_ids.size() != n || eligible.size() != n) {
    throw DomainError("representation batch: field lengths disagree");
  }
  if (num_domains < 1 || num_classes < 1) {
    throw DomainError("representation batch: num_domains and num_classes must be positive");
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (domain_ids[s] < 0 || domain_ids[s] >= num_domains) {
      throw DomainError("representation batch: domain id out of range");
    }
    if (eligible[s] && (class_ids[s] < 0 || class_ids[s] >= num_classes)) {
      throw DomainError("representation batch: class id out of range");
    }
  }
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("cosine_similarity: length mismatch");
  // Rescale by the largest magnitude so squares cannot overflow.
  double sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sa = std::max(sa, std::abs(a[k]));
    sb = std::max(sb, std::abs(b[k]));
  }
  if (sa == 0.0 || sb == 0.0) throw DomainError("cosine_similarity: zero vector");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a[k] / sa, y = b[k] / sb;
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

GroupCentroids group_centroids(const RepresentationBatch& batch) {
  batch.validate();
  const Groups g = build_groups(batch);
  const MatrixXd means = g.weights.transpose() * batch.vectors;
  GroupCentroids out;
  auto centroid = [&](Index k) -> std::optional<VectorXd> {
    if (g.counts[static_cast<std::size_t>(k)] == 0) return std::nullopt;
    const double norm = means.row(k).norm();
    if (norm < GroupCentroids::kDegenerateNorm) {
      ++out.degenerate_groups;
      return std::nullopt;
    }
    return VectorXd(means.row(k).transpose() / norm);
  };
  for (int j = 0; j < g.C; ++j) out.class_centroid.push_back(centroid(g.cls(j)));
  out.domain_minus.resize(static_cast<std::size_t>(g.D));
  out.domain_same.resize(static_cast<std::size_t>(g.D));
  for (int i = 0; i < g.D; ++i) {
    for (int j = 0; j < g.C; ++j) {
      out.domain_minus[static_cast<std::size_t>(i)].push_back(centroid(g.minus(i, j)));
      out.domain_same[static_cast<std::size_t>(i)].push_back(centroid(g.same(i, j)));
    }
  }
  return out;
}

TermWithPartials repel_term(std::span<const double> negative_sims, double temperature) {
  TermWithPartials t;
  std::vector<double> scaled(negative_sims.begin(), negative_sims.end());
  for (double& v : scaled) v /= temperature;
  std::vector<double> softmax;
  t.value = log_sum_exp(scaled, &softmax) - 1.0 / temperature;
  t.d_negatives.resize(softmax.size());
  for (std::size_t k = 0; k < softmax.size(); ++k) t.d_negatives[k] = softmax[k] / temperature;
  return t;
}

TermWithPartials positive_term(double positive_sim, std::span<const double> negative_sims,
                               double temperature) {
  TermWithPartials t;
  std::vector<double> scaled;
  scaled.reserve(negative_sims.size() + 1);
  scaled.push_back(positive_sim / temperature);
  for (double v : negative_sims) scaled.push_back(v / temperature);
  std::vector<double> softmax;
  t.value = log_sum_exp(scaled, &softmax) - scaled[0];
  t.d_positive = (softmax[0] - 1.0) / temperature;
  t.d_negatives.resize(negative_sims.size());
  for (std::size_t k = 0; k < negative_sims.size(); ++k) {
    t.d_negatives[k] = softmax[k + 1] / temperature;
  }
  return t;
}

LossResult fixclr_loss(const RepresentationBatch& batch, const FixClrConfig& cfg) {
  if (cfg.variant != Variant::repel_only) {
    throw ConfigError("fixclr_loss requires the repel_only variant");
  }
  return run(batch, cfg, false);
}

LossResult fixclr_loss_with_positives(const RepresentationBatch& batch,
                                      const FixClrConfig& cfg) {
  if (cfg.variant != Variant::with_positives) {
    throw ConfigError("fixclr_loss_with_positives requires the with_positives variant");
  }
  return run(batch, cfg, true);
}

LossResult evaluate(const RepresentationBatch& batch, const FixClrConfig& cfg) {
  return cfg.variant == Variant::repel_only ? fixclr_loss(batch, cfg)
                                            : fixclr_loss_with_positives(batch, cfg);
}

}  // namespace fixclr::loss
