#include "fixclr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>

#include "fixclr/error.hpp"

namespace fixclr::data {

namespace {

class Fnv1a {
 public:
  void add(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void add_value(T value) {
    add(&value, sizeof(value));
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace

MultiDomainDataset::MultiDomainDataset(int num_domains, int num_classes, int feature_dim,
                                       std::vector<Sample> samples, nlohmann::json provenance)
    : num_domains_(num_domains),
      num_classes_(num_classes),
      feature_dim_(feature_dim),
      samples_(std::move(samples)),
      provenance_(std::move(provenance)) {
  if (num_domains_ < 1 || num_classes_ < 1 || feature_dim_ < 1) {
    throw DataError("dataset needs at least one domain, class and feature");
  }
  for (const Sample& s : samples_) {
    if (s.domain_id < 0 || s.domain_id >= num_domains_) {
      throw DataError("sample " + std::to_string(s.sample_id) + " has domain_id " +
                      std::to_string(s.domain_id) + " outside [0, " +
                      std::to_string(num_domains_) + ")");
    }
    if (s.class_id < 0 || s.class_id >= num_classes_) {
      throw DataError("sample " + std::to_string(s.sample_id) + " has class_id " +
                      std::to_string(s.class_id) + " outside [0, " +
                      std::to_string(num_classes_) + ")");
    }
    if (static_cast<int>(s.features.size()) != feature_dim_) {
      throw DataError("sample " + std::to_string(s.sample_id) + " has " +
                      std::to_string(s.features.size()) + " features, expected " +
                      std::to_string(feature_dim_));
    }
  }
  id_order_.resize(samples_.size());
  std::iota(id_order_.begin(), id_order_.end(), std::size_t{0});
  std::sort(id_order_.begin(), id_order_.end(), [this](std::size_t a, std::size_t b) {
    return samples_[a].sample_id < samples_[b].sample_id;
  });
  for (std::size_t i = 1; i < id_order_.size(); ++i) {
    if (samples_[id_order_[i]].sample_id == samples_[id_order_[i - 1]].sample_id) {
      throw DataError("duplicate sample_id " + std::to_string(samples_[id_order_[i]].sample_id));
    }
  }
}

std::size_t MultiDomainDataset::index_of(SampleId id) const {
  auto it = std::lower_bound(id_order_.begin(), id_order_.end(), id,
                             [this](std::size_t idx, SampleId v) {
                               return samples_[idx].sample_id < v;
                             });
  if (it == id_order_.end() || samples_[*it].sample_id != id) {
    throw DataError("unknown sample_id " + std::to_string(id));
  }
  return *it;
}

std::string MultiDomainDataset::fingerprint() const {
  Fnv1a h;
  h.add_value(num_domains_);
  h.add_value(num_classes_);
  h.add_value(feature_dim_);
  for (const Sample& s : samples_) {
    h.add_value(s.sample_id);
    h.add_value(s.domain_id);
    h.add_value(s.class_id);
    h.add(s.features.data(), s.features.size() * sizeof(double));
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h.value();
  return out.str();
}

void SyntheticConfig::validate() const {
  if (num_domains < 1) throw ConfigError("synthetic: num_domains must be positive");
  if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (feature_dim < 1) throw ConfigError("synthetic: feature_dim must be positive");
  if (samples_per_domain_class < 1) {
    throw ConfigError("synthetic: samples_per_domain_class must be positive");
  }
  if (!(class_separation > 0.0)) throw ConfigError("synthetic: class_separation must be > 0");
  if (!(noise_std >= 0.0)) throw ConfigError("synthetic: noise_std must be >= 0");
  if (feature_dim >= 2) {
    if (rotation_axis_a < 0 || rotation_axis_a >= feature_dim || rotation_axis_b < 0 ||
        rotation_axis_b >= feature_dim || rotation_axis_a == rotation_axis_b) {
      throw ConfigError("synthetic: rotation axes must be two distinct feature indices");
    }
  }
  if (!domain_transforms.empty()) {
    if (static_cast<int>(domain_transforms.size()) != num_domains) {
      throw ConfigError("synthetic: need one domain transform per domain");
    }
    for (const DomainTransform& t : domain_transforms) {
      if (!std::isfinite(t.scale) || t.scale == 0.0) {
        throw ConfigError("synthetic: domain transform scale must be finite and nonzero");
      }
      if (!t.offset.empty() && static_cast<int>(t.offset.size()) != feature_dim) {
        throw ConfigError("synthetic: domain offset length must equal feature_dim");
      }
      if (t.rotation != 0.0 && feature_dim < 2) {
        throw ConfigError("synthetic: rotation needs feature_dim >= 2");
      }
    }
  }
}

std::vector<DomainTransform> make_domain_transforms(int num_domains, int feature_dim,
                                                    double rotation_step, double offset_norm,
                                                    double scale_step, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7472616e73ULL));
  std::vector<DomainTransform> out(static_cast<std::size_t>(num_domains));
  for (int d = 0; d < num_domains; ++d) {
    DomainTransform& t = out[static_cast<std::size_t>(d)];
    t.rotation = rotation_step * d;
    t.scale = 1.0 + scale_step * d;
    t.offset.assign(static_cast<std::size_t>(feature_dim), 0.0);
    double norm = 0.0;
    for (double& v : t.offset) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : t.offset) v = norm > 0.0 ? v * offset_norm / norm : 0.0;
  }
  return out;
}

std::vector<std::vector<double>> synthetic_class_means(const SyntheticConfig& config) {
  const auto C = static_cast<std::size_t>(config.num_classes);
  const auto F = static_cast<std::size_t>(config.feature_dim);
  std::vector<std::vector<double>> means(C, std::vector<double>(F, 0.0));
  const double radius = config.class_separation / std::sqrt(2.0);
  if (C <= F) {
    for (std::size_t c = 0; c < C; ++c) means[c][c] = radius;
    return means;
  }
  // More classes than dimensions: seeded random directions on the sphere.
  Rng rng(derive_seed(config.seed, 0x6d65616e73ULL));
  for (auto& m : means) {
    double norm = 0.0;
    for (double& v : m) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : m) v *= radius / norm;
  }
  return means;
}

std::vector<double> apply_domain_transform(const SyntheticConfig& config, int domain,
                                           std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  if (config.domain_transforms.empty()) return y;
  const DomainTransform& t = config.domain_transforms.at(static_cast<std::size_t>(domain));
  if (t.rotation != 0.0) {
    const auto a = static_cast<std::size_t>(config.rotation_axis_a);
    const auto b = static_cast<std::size_t>(config.rotation_axis_b);
    const double c = std::cos(t.rotation);
    const double s = std::sin(t.rotation);
    const double ya = c * y[a] - s * y[b];
    const double yb = s * y[a] + c * y[b];
    y[a] = ya;
    y[b] = yb;
  }
  for (std::size_t k = 0; k < y.size(); ++k) {
    y[k] *= t.scale;
    if (!t.offset.empty()) y[k] += t.offset[k];
  }
  return y;
}

MultiDomainDataset synth_generate(const SyntheticConfig& config) {
  config.validate();
  const auto means = synthetic_class_means(config);
  Rng rng(derive_seed(config.seed, 0x73616d706c65ULL));
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(config.num_domains) * config.num_classes *
                  config.samples_per_domain_class);
  std::vector<double> x(static_cast<std::size_t>(config.feature_dim));
  SampleId next_id = 0;
  for (int d = 0; d < config.num_domains; ++d) {
    for (int c = 0; c < config.num_classes; ++c) {
      const auto& mean = means[static_cast<std::size_t>(c)];
      for (int k = 0; k < config.samples_per_domain_class; ++k) {
        for (std::size_t f = 0; f < x.size(); ++f) {
          x[f] = mean[f] + config.noise_std * rng.normal();
        }
        samples.push_back(Sample{next_id++, d, c, apply_domain_transform(config, d, x)});
      }
    }
  }
  nlohmann::json provenance = {{"kind", "synthetic"}, {"config", to_json(config)}};
  return MultiDomainDataset(config.num_domains, config.num_classes, config.feature_dim,
                            std::move(samples), std::move(provenance));
}

nlohmann::json to_json(const SyntheticConfig& config) {
  nlohmann::json transforms = nlohmann::json::array();
  for (const DomainTransform& t : config.domain_transforms) {
    transforms.push_back({{"rotation", t.rotation}, {"offset", t.offset}, {"scale", t.scale}});
  }
  return {{"num_domains", config.num_domains},
          {"num_classes", config.num_classes},
          {"feature_dim", config.feature_dim},
          {"samples_per_domain_class", config.samples_per_domain_class},
          {"class_separation", config.class_separation},
          {"noise_std", config.noise_std},
          {"seed", config.seed},
          {"rotation_axes", {config.rotation_axis_a, config.rotation_axis_b}},
          {"domain_transforms", transforms}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  c.num_domains = j.at("num_domains").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.samples_per_domain_class = j.at("samples_per_domain_class").get<int>();
  c.class_separation = j.at("class_separation").get<double>();
  c.noise_std = j.at("noise_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("rotation_axes")) {
    c.rotation_axis_a = j.at("rotation_axes").at(0).get<int>();
    c.rotation_axis_b = j.at("rotation_axes").at(1).get<int>();
  }
  if (j.contains("domain_transforms")) {
    for (const auto& t : j.at("domain_transforms")) {
      DomainTransform dt;
      dt.rotation = t.at("rotation").get<double>();
      dt.offset = t.at("offset").get<std::vector<double>>();
      dt.scale = t.at("scale").get<double>();
      c.domain_transforms.push_back(std::move(dt));
    }
  }
  return c;
}

std::vector<SplitSpec> leave_one_domain_out_splits(const MultiDomainDataset& ds, int n_labels,
                                                   std::uint64_t seed) {
  const int D = ds.num_domains();
  const int C = ds.num_classes();
  if (D < 2) throw DataError("leave-one-domain-out needs at least 2 domains");
  if (n_labels < 0) throw ConfigError("n_labels must be >= 0");

  // Labeled picks per (domain, class), independent of the target.
  std::vector<std::vector<SampleId>> by_pair(static_cast<std::size_t>(D * C));
  for (const Sample& s : ds.samples()) {
    by_pair[static_cast<std::size_t>(s.domain_id * C + s.class_id)].push_back(s.sample_id);
  }
  std::vector<std::vector<SampleId>> labeled_by_pair(by_pair.size());
  for (int d = 0; d < D; ++d) {
    for (int c = 0; c < C; ++c) {
      auto ids = by_pair[static_cast<std::size_t>(d * C + c)];
      if (static_cast<int>(ids.size()) < n_labels) {
        throw DataError("insufficient samples for label budget at (domain " + std::to_string(d) +
                        ", class " + std::to_string(c) + "): have " +
                        std::to_string(ids.size()) + ", need " + std::to_string(n_labels));
      }
      std::sort(ids.begin(), ids.end());
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(d * C + c)));
      rng.shuffle(std::span<SampleId>(ids));
      ids.resize(static_cast<std::size_t>(n_labels));
      labeled_by_pair[static_cast<std::size_t>(d * C + c)] = std::move(ids);
    }
  }

  std::vector<SplitSpec> splits;
  for (int target = 0; target < D; ++target) {
    SplitSpec split;
    split.target_domain = target;
    split.n_labels = n_labels;
    split.seed = seed;
    for (int d = 0; d < D; ++d) {
      if (d != target) split.source_domains.push_back(d);
    }
    for (int d : split.source_domains) {
      for (int c = 0; c < C; ++c) {
        const auto& labeled = labeled_by_pair[static_cast<std::size_t>(d * C + c)];
        split.labeled_ids.insert(split.labeled_ids.end(), labeled.begin(), labeled.end());
      }
    }
    std::sort(split.labeled_ids.begin(), split.labeled_ids.end());
    for (const Sample& s : ds.samples()) {
      if (s.domain_id == target) continue;
      if (!std::binary_search(split.labeled_ids.begin(), split.labeled_ids.end(), s.sample_id)) {
        split.unlabeled_ids.push_back(s.sample_id);
      }
    }
    std::sort(split.unlabeled_ids.begin(), split.unlabeled_ids.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

std::vector<std::size_t> target_indices(const MultiDomainDataset& ds, const SplitSpec& split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.sample(i).domain_id == split.target_domain) out.push_back(i);
  }
  return out;
}

MixedDomainSampler::MixedDomainSampler(const MultiDomainDataset& ds, const SplitSpec& split,
                                       int batch_size, int mu)
    : batch_size_(batch_size), mu_(mu) {
  const int sources = static_cast<int>(split.source_domains.size());
  if (sources < 1) throw ConfigError("split has no source domains");
  if (batch_size < 1 || mu < 1) throw ConfigError("batch_size and mu must be positive");
  if (batch_size % sources != 0) {
    throw ConfigError("batch_size " + std::to_string(batch_size) +
                      " is not divisible by the number of source domains (" +
                      std::to_string(sources) + ")");
  }
  per_domain_labeled_ = batch_size / sources;
  per_domain_unlabeled_ = mu * batch_size / sources;

  std::map<int, std::size_t> slot;
  for (int d : split.source_domains) {
    if (d == split.target_domain) throw DataError("target domain listed as a source");
    slot[d] = slot.size();
  }
  labeled_pools_.resize(slot.size());
  unlabeled_pools_.resize(slot.size());
  auto fill = [&](const std::vector<SampleId>& ids, std::vector<Pool>& pools) {
    for (SampleId id : ids) {
      const std::size_t idx = ds.index_of(id);
      auto it = slot.find(ds.sample(idx).domain_id);
      if (it == slot.end()) {
        throw DataError("split sample " + std::to_string(id) + " is not in a source domain");
      }
      pools[it->second].items.push_back(idx);
    }
  };
  fill(split.labeled_ids, labeled_pools_);
  fill(split.unlabeled_ids, unlabeled_pools_);
  for (std::size_t k = 0; k < slot.size(); ++k) {
    if (labeled_pools_[k].items.empty() || unlabeled_pools_[k].items.empty()) {
      throw DataError("source domain " + std::to_string(split.source_domains[k]) +
                      " has no labeled or no unlabeled samples");
    }
  }
}

void MixedDomainSampler::take(Pool& pool, int count, Rng& rng, std::vector<std::size_t>& out) {
  for (int k = 0; k < count; ++k) {
    if (!pool.shuffled || pool.cursor == pool.items.size()) {
      rng.shuffle(std::span<std::size_t>(pool.items));
      pool.cursor = 0;
      pool.shuffled = true;
    }
    out.push_back(pool.items[pool.cursor++]);
  }
}

MixedBatch MixedDomainSampler::draw(Rng& rng) {
  MixedBatch batch;
  batch.labeled.reserve(static_cast<std::size_t>(batch_size_));
  batch.unlabeled.reserve(static_cast<std::size_t>(batch_size_ * mu_));
  for (Pool& pool : labeled_pools_) take(pool, per_domain_labeled_, rng, batch.labeled);
  for (Pool& pool : unlabeled_pools_) take(pool, per_domain_unlabeled_, rng, batch.unlabeled);
  return batch;
}

MixedBatch mixed_domain_batch(const MultiDomainDataset& ds, const SplitSpec& split,
                              int batch_size, int mu, Rng& rng) {
  MixedDomainSampler sampler(ds, split, batch_size, mu);
  return sampler.draw(rng);
}

}  // namespace fixclr::data
