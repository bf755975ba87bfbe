#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixclr/rng.hpp"

namespace fixclr::data {

using SampleId = std::int64_t;

struct Sample {
  SampleId sample_id = 0;
  int domain_id = 0;
  int class_id = 0;
  std::vector<double> features;
};

/// Samples tagged with (domain, class). All splits and batches refer to
/// samples by index into `samples` or by `sample_id`.
class MultiDomainDataset {
 public:
  MultiDomainDataset() = default;
  MultiDomainDataset(int num_domains, int num_classes, int feature_dim,
                     std::vector<Sample> samples, nlohmann::json provenance);

  int num_domains() const { return num_domains_; }
  int num_classes() const { return num_classes_; }
  int feature_dim() const { return feature_dim_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& sample(std::size_t index) const { return samples_[index]; }
  std::size_t size() const { return samples_.size(); }
  const nlohmann::json& provenance() const { return provenance_; }

  // Index into samples() for an id; throws DataError when unknown.
  std::size_t index_of(SampleId id) const;

  // Stable hash over header and every record; identifies a benchmark.
  std::string fingerprint() const;

 private:
  int num_domains_ = 0;
  int num_classes_ = 0;
  int feature_dim_ = 0;
  std::vector<Sample> samples_;
  nlohmann::json provenance_;
  std::vector<std::size_t> id_order_;  // samples_ indices sorted by id
};

// Invertible affine map applied to a domain: scale * rotate(x) + offset.
// The rotation acts in the plane spanned by two fixed coordinates.
struct DomainTransform {
  double rotation = 0.0;  // radians
  std::vector<double> offset;
  double scale = 1.0;
};

struct SyntheticConfig {
  int num_domains = 4;
  int num_classes = 5;
  int feature_dim = 16;
  int samples_per_domain_class = 100;
  double class_separation = 4.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  int rotation_axis_a = 0;
  int rotation_axis_b = 1;
  std::vector<DomainTransform> domain_transforms;

  void validate() const;
};

// Evenly spaced rotations (domain d gets d * rotation_step), seeded random
// offsets of the given norm, and scales 1 + scale_step * d.
std::vector<DomainTransform> make_domain_transforms(int num_domains, int feature_dim,
                                                    double rotation_step, double offset_norm,
                                                    double scale_step, std::uint64_t seed);

// Class means before any domain transform; pairwise distance equals
// class_separation when num_classes <= feature_dim.
std::vector<std::vector<double>> synthetic_class_means(const SyntheticConfig& config);

std::vector<double> apply_domain_transform(const SyntheticConfig& config, int domain,
                                           std::span<const double> x);

MultiDomainDataset synth_generate(const SyntheticConfig& config);

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

// Leave-one-domain-out split. Ids are kept sorted ascending.
struct SplitSpec {
  int target_domain = 0;
  std::vector<int> source_domains;
  std::vector<SampleId> labeled_ids;
  std::vector<SampleId> unlabeled_ids;
  int n_labels = 0;
  std::uint64_t seed = 0;
};

// One split per target domain. Labeled ids for a source (domain, class) pair
// are a seeded shuffle then prefix-take, with the stream derived from
// (seed, domain, class) so a domain's labels do not depend on the target.
std::vector<SplitSpec> leave_one_domain_out_splits(const MultiDomainDataset& ds, int n_labels,
                                                   std::uint64_t seed);

// Sample indices (not ids) for a split's target domain.
std::vector<std::size_t> target_indices(const MultiDomainDataset& ds, const SplitSpec& split);

struct MixedBatch {
  std::vector<std::size_t> labeled;    // dataset indices, grouped by source domain
  std::vector<std::size_t> unlabeled;  // dataset indices, grouped by source domain
};

/// Draws domain-stratified labeled / unlabeled minibatches for one split.
///
/// Each source domain contributes batch_size / |sources| labeled and
/// mu * batch_size / |sources| unlabeled samples. Per-domain pools are
/// consumed in shuffled order and reshuffled when exhausted, so sampling
/// is without replacement until a pool wraps.
class MixedDomainSampler {
 public:
  MixedDomainSampler(const MultiDomainDataset& ds, const SplitSpec& split, int batch_size,
                     int mu);

  MixedBatch draw(Rng& rng);

  int batch_size() const { return batch_size_; }
  int mu() const { return mu_; }
  int per_domain_labeled() const { return per_domain_labeled_; }
  int per_domain_unlabeled() const { return per_domain_unlabeled_; }

 private:
  struct Pool {
    std::vector<std::size_t> items;
    std::size_t cursor = 0;
    bool shuffled = false;
  };
  static void take(Pool& pool, int count, Rng& rng, std::vector<std::size_t>& out);

  int batch_size_;
  int mu_;
  int per_domain_labeled_;
  int per_domain_unlabeled_;
  std::vector<Pool> labeled_pools_;
  std::vector<Pool> unlabeled_pools_;
};

// One draw from a fresh sampler.
MixedBatch mixed_domain_batch(const MultiDomainDataset& ds, const SplitSpec& split,
                              int batch_size, int mu, Rng& rng);

// Dataset file (text, self-describing):
//   line 1: "# fixclr-dataset v1"
//   line 2: "# " + compact JSON header {num_domains, num_classes, feature_dim,
//           num_samples, seed, provenance}
//   line 3: "sample_id,domain_id,class_id,f0,...,f{F-1}"
//   then one record per sample in dataset order; reals printed with 17
//   significant digits so they parse back to the same 64-bit value.
void write_dataset(const MultiDomainDataset& ds, const std::filesystem::path& path);
MultiDomainDataset read_dataset(const std::filesystem::path& path);

}  // namespace fixclr::data
