// Reference evaluation of the FixCLR regularizer with explicit scalar loops.
// Shares no code with fixclr_loss.cpp beyond the public types.

#include <cmath>
#include <vector>

#include "fixclr/error.hpp"
#include "fixclr/fixclr_loss.hpp"

namespace fixclr::loss {

namespace {

struct Group {
  std::vector<std::size_t> members;
  std::vector<double> mean;
  double norm = 0.0;
};

double dot_loop(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double clamp_unit(double v) { return v > 1.0 ? 1.0 : (v < -1.0 ? -1.0 : v); }

class Oracle {
 public:
  Oracle(const RepresentationBatch& b, const FixClrConfig& cfg) : b_(b), cfg_(cfg) {
    n_ = b.size();
    p_ = static_cast<std::size_t>(b.vectors.cols());
    rows_.assign(n_, std::vector<double>(p_, 0.0));
    for (std::size_t s = 0; s < n_; ++s) {
      for (std::size_t k = 0; k < p_; ++k) {
        rows_[s][k] = b.vectors(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
      }
    }
  }

  Group make_group(int domain, int cls, bool same_class) const {
    // domain < 0: any domain; same_class false: class != cls.
    Group g;
    g.mean.assign(p_, 0.0);
    for (std::size_t s = 0; s < n_; ++s) {
      if (!b_.eligible[s]) continue;
      if (domain >= 0 && b_.domain_ids[s] != domain) continue;
      const bool match = b_.class_ids[s] == cls;
      if (match != same_class) continue;
      g.members.push_back(s);
      for (std::size_t k = 0; k < p_; ++k) g.mean[k] += rows_[s][k];
    }
    if (!g.members.empty()) {
      for (std::size_t k = 0; k < p_; ++k) g.mean[k] /= static_cast<double>(g.members.size());
    }
    g.norm = std::sqrt(dot_loop(g.mean, g.mean));
    return g;
  }

  bool present(const Group& g) const {
    if (g.members.empty()) return false;
    if (cfg_.similarity == SimilarityMode::centroid) return g.norm >= 1e-12;
    return true;
  }

  double sim(const Group& a, const Group& b) const {
    if (cfg_.similarity == SimilarityMode::centroid) {
      return clamp_unit(dot_loop(a.mean, b.mean) / (a.norm * b.norm));
    }
    double total = 0.0;
    for (std::size_t x : a.members) {
      const double nx = std::sqrt(dot_loop(rows_[x], rows_[x]));
      for (std::size_t y : b.members) {
        const double ny = std::sqrt(dot_loop(rows_[y], rows_[y]));
        if (nx == 0.0 || ny == 0.0) throw DomainError("fixclr oracle: zero vector");
        total += clamp_unit(dot_loop(rows_[x], rows_[y]) / (nx * ny));
      }
    }
    return total / static_cast<double>(a.members.size() * b.members.size());
  }

  OracleResult evaluate() const {
    OracleResult out;
    std::vector<bool> seen(static_cast<std::size_t>(b_.num_classes), false);
    int distinct = 0;
    for (std::size_t s = 0; s < n_; ++s) {
      for (std::size_t k = 0; k < p_; ++k) {
        if (!std::isfinite(rows_[s][k])) throw NumericError("fixclr oracle: non-finite input");
      }
      if (b_.eligible[s] && !seen[static_cast<std::size_t>(b_.class_ids[s])]) {
        seen[static_cast<std::size_t>(b_.class_ids[s])] = true;
        ++distinct;
      }
    }
    if (distinct < 2) {
      out.skipped = true;
      return out;
    }
    const double tau = cfg_.temperature;
    std::vector<Group> cls;
    for (int j = 0; j < b_.num_classes; ++j) cls.push_back(make_group(-1, j, true));

    for (int i = 0; i < b_.num_domains; ++i) {
      bool has = false;
      for (std::size_t s = 0; s < n_; ++s) has = has || (b_.eligible[s] && b_.domain_ids[s] == i);
      if (!has) continue;

      std::vector<double> exps_args;
      for (int j = 0; j < b_.num_classes; ++j) {
        const Group minus = make_group(i, j, false);
        if (present(minus) && present(cls[static_cast<std::size_t>(j)])) {
          exps_args.push_back(sim(minus, cls[static_cast<std::size_t>(j)]) / tau);
        }
      }

      if (cfg_.variant == Variant::repel_only) {
        if (exps_args.empty()) continue;
        out.value += log_sum_exp_loop(exps_args) - 1.0 / tau;
      } else {
        double p = 0.0;
        int count = 0;
        for (int j = 0; j < b_.num_classes; ++j) {
          const Group same = make_group(i, j, true);
          if (present(same) && present(cls[static_cast<std::size_t>(j)])) {
            p += sim(same, cls[static_cast<std::size_t>(j)]);
            ++count;
          }
        }
        if (count == 0) continue;
        p /= count;
        std::vector<double> all{p / tau};
        all.insert(all.end(), exps_args.begin(), exps_args.end());
        out.value += log_sum_exp_loop(all) - p / tau;
      }
    }
    return out;
  }

 private:
  static double log_sum_exp_loop(const std::vector<double>& x) {
    double m = x[0];
    for (double v : x) m = v > m ? v : m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
  }

  const RepresentationBatch& b_;
  const FixClrConfig& cfg_;
  std::size_t n_ = 0;
  std::size_t p_ = 0;
  std::vector<std::vector<double>> rows_;
};

}  // namespace

OracleResult fixclr_oracle(const RepresentationBatch& batch, const FixClrConfig& cfg) {
  cfg.validate();
  batch.validate();
  if (batch.size() > 512) throw DomainError("fixclr oracle supports at most 512 samples");
  return Oracle(batch, cfg).evaluate();
}

}  // namespace fixclr::loss
