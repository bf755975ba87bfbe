#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fixclr/data.hpp"
#include "fixclr/error.hpp"
#include "temp_dir.hpp"

using namespace fixclr;
using namespace fixclr::data;

namespace {

SyntheticConfig small_config(int domains = 4, int per_class = 20) {
  SyntheticConfig c;
  c.num_domains = domains;
  c.num_classes = 3;
  c.feature_dim = 6;
  c.samples_per_domain_class = per_class;
  c.seed = 17;
  c.domain_transforms = make_domain_transforms(domains, c.feature_dim, 0.4, 2.0, 0.1, 17);
  return c;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and complete") {
  const SyntheticConfig cfg = small_config();
  const MultiDomainDataset a = synth_generate(cfg);
  const MultiDomainDataset b = synth_generate(cfg);
  CHECK(a.size() == 4u * 3u * 20u);
  CHECK(a.fingerprint() == b.fingerprint());
  std::map<std::pair<int, int>, int> counts;
  for (const Sample& s : a.samples()) {
    CHECK(s.features.size() == 6u);
    ++counts[{s.domain_id, s.class_id}];
  }
  for (const auto& [key, n] : counts) CHECK(n == 20);

  SyntheticConfig other = cfg;
  other.seed = 18;
  CHECK(synth_generate(other).fingerprint() != a.fingerprint());
}

TEST_CASE("domain transforms are invertible affine maps of a shared layout") {
  SyntheticConfig cfg = small_config();
  cfg.noise_std = 0.0;
  const auto means = synthetic_class_means(cfg);
  const MultiDomainDataset ds = synth_generate(cfg);
  for (const Sample& s : ds.samples()) {
    const auto expect = apply_domain_transform(cfg, s.domain_id, means[s.class_id]);
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK(s.features[k] == doctest::Approx(expect[k]));
  }
}

TEST_CASE("invalid synthetic configs are rejected") {
  SyntheticConfig cfg = small_config();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.noise_std = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("leave-one-domain-out splits partition the sources") {
  const MultiDomainDataset ds = synth_generate(small_config());
  const auto splits = leave_one_domain_out_splits(ds, 5, 3);
  REQUIRE(splits.size() == 4u);
  for (const SplitSpec& sp : splits) {
    CHECK(sp.source_domains.size() == 3u);
    CHECK(std::find(sp.source_domains.begin(), sp.source_domains.end(), sp.target_domain) ==
          sp.source_domains.end());
    std::set<SampleId> labeled(sp.labeled_ids.begin(), sp.labeled_ids.end());
    std::set<SampleId> unlabeled(sp.unlabeled_ids.begin(), sp.unlabeled_ids.end());
    CHECK(labeled.size() == sp.labeled_ids.size());
    std::set<SampleId> both;
    std::set_intersection(labeled.begin(), labeled.end(), unlabeled.begin(), unlabeled.end(),
                          std::inserter(both, both.end()));
    CHECK(both.empty());

    std::set<SampleId> sources;
    for (const Sample& s : ds.samples()) {
      if (s.domain_id != sp.target_domain) sources.insert(s.sample_id);
    }
    std::set<SampleId> all = labeled;
    all.insert(unlabeled.begin(), unlabeled.end());
    CHECK(all == sources);

    std::map<std::pair<int, int>, int> budget;
    for (SampleId id : sp.labeled_ids) {
      const Sample& s = ds.sample(ds.index_of(id));
      ++budget[{s.domain_id, s.class_id}];
    }
    CHECK(budget.size() == 3u * 3u);
    for (const auto& [key, n] : budget) CHECK(n == 5);
  }
}

TEST_CASE("split construction is deterministic and seed-dependent") {
  const MultiDomainDataset ds = synth_generate(small_config());
  const auto a = leave_one_domain_out_splits(ds, 5, 3);
  const auto b = leave_one_domain_out_splits(ds, 5, 3);
  const auto c = leave_one_domain_out_splits(ds, 5, 4);
  CHECK(a[1].labeled_ids == b[1].labeled_ids);
  CHECK(a[1].labeled_ids != c[1].labeled_ids);
}

TEST_CASE("label budget larger than a domain-class pair is a data error") {
  const MultiDomainDataset ds = synth_generate(small_config(4, 4));
  CHECK_THROWS_AS(leave_one_domain_out_splits(ds, 5, 0), DataError);
  CHECK_NOTHROW(leave_one_domain_out_splits(ds, 4, 0));
}

TEST_CASE("a single-domain dataset has no leave-one-out split") {
  const MultiDomainDataset ds = synth_generate(small_config(1));
  CHECK_THROWS_AS(leave_one_domain_out_splits(ds, 2, 0), DataError);
}

TEST_CASE("mixed-domain batches are stratified across sources") {
  SyntheticConfig cfg = small_config();
  cfg.samples_per_domain_class = 40;
  const MultiDomainDataset ds = synth_generate(cfg);
  const SplitSpec sp = leave_one_domain_out_splits(ds, 10, 0)[0];
  MixedDomainSampler sampler(ds, sp, 48, 1);
  CHECK(sampler.per_domain_labeled() == 16);
  Rng rng(1);
  std::set<SampleId> labeled(sp.labeled_ids.begin(), sp.labeled_ids.end());
  for (int k = 0; k < 20; ++k) {
    const MixedBatch b = sampler.draw(rng);
    CHECK(b.labeled.size() == 48u);
    CHECK(b.unlabeled.size() == 48u);
    std::map<int, int> per_domain;
    for (std::size_t i : b.labeled) {
      ++per_domain[ds.sample(i).domain_id];
      CHECK(labeled.count(ds.sample(i).sample_id) == 1u);
    }
    for (std::size_t i : b.unlabeled) {
      CHECK(ds.sample(i).domain_id != sp.target_domain);
      CHECK(labeled.count(ds.sample(i).sample_id) == 0u);
    }
    CHECK(per_domain.size() == 3u);
    for (const auto& [d, n] : per_domain) CHECK(n == 16);
  }

  MixedDomainSampler wide(ds, sp, 48, 3);
  CHECK(wide.draw(rng).unlabeled.size() == 144u);
}

TEST_CASE("batch size must divide across source domains") {
  SyntheticConfig cfg = small_config(14, 2);
  const MultiDomainDataset ds = synth_generate(cfg);
  const SplitSpec sp = leave_one_domain_out_splits(ds, 1, 0)[0];
  CHECK(sp.source_domains.size() == 13u);
  CHECK_THROWS_AS(MixedDomainSampler(ds, sp, 44, 1), ConfigError);
  CHECK_NOTHROW(MixedDomainSampler(ds, sp, 39, 1));
}

TEST_CASE("sampling is a pure function of the rng state") {
  const MultiDomainDataset ds = synth_generate(small_config());
  const SplitSpec sp = leave_one_domain_out_splits(ds, 5, 0)[2];
  Rng a(5), b(5);
  const MixedBatch x = mixed_domain_batch(ds, sp, 12, 2, a);
  const MixedBatch y = mixed_domain_batch(ds, sp, 12, 2, b);
  CHECK(x.labeled == y.labeled);
  CHECK(x.unlabeled == y.unlabeled);
}

TEST_CASE("dataset files round-trip exactly") {
  fixclr::testing::TempDir tmp;
  const MultiDomainDataset ds = synth_generate(small_config());
  write_dataset(ds, tmp.path() / "d.csv");
  const MultiDomainDataset back = read_dataset(tmp.path() / "d.csv");
  CHECK(back.fingerprint() == ds.fingerprint());
  CHECK(back.num_domains() == 4);
  CHECK(back.provenance() == ds.provenance());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.sample(i).features == ds.sample(i).features);

  std::ifstream in(tmp.path() / "d.csv");
  std::string first;
  std::getline(in, first);
  CHECK(first == "# fixclr-dataset v1");
}

TEST_CASE("malformed dataset files are data errors") {
  fixclr::testing::TempDir tmp;
  {
    std::ofstream out(tmp.path() / "bad.csv");
    out << "# fixclr-dataset v1\n# {\"num_domains\": 2}\nnot,a,header\n";
  }
  CHECK_THROWS_AS(read_dataset(tmp.path() / "bad.csv"), DataError);
  CHECK_THROWS_AS(read_dataset(tmp.path() / "missing.csv"), IoError);
}

TEST_CASE("duplicate sample ids are rejected") {
  std::vector<Sample> s = {{0, 0, 0, {1.0}}, {0, 1, 0, {2.0}}};
  CHECK_THROWS_AS(MultiDomainDataset(2, 2, 1, s, {}), DataError);
}
