#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixclr/error.hpp"
#include "fixclr/fixclr_loss.hpp"
#include "properties.hpp"

using namespace fixclr;
using namespace fixclr::loss;

namespace {

RepresentationBatch batch_of(std::initializer_list<std::pair<double, double>> vs,
                             std::vector<int> domains, std::vector<int> classes, int d, int c) {
  RepresentationBatch b;
  b.vectors.resize(static_cast<Eigen::Index>(vs.size()), 2);
  Eigen::Index i = 0;
  for (auto [x, y] : vs) {
    b.vectors(i, 0) = x;
    b.vectors(i, 1) = y;
    ++i;
  }
  b.domain_ids = std::move(domains);
  b.class_ids = std::move(classes);
  b.eligible.assign(vs.size(), true);
  b.num_domains = d;
  b.num_classes = c;
  return b;
}

FixClrConfig positives() {
  FixClrConfig c;
  c.variant = Variant::with_positives;
  return c;
}

void report(const fixclr::testing::CheckResult& r) {
  INFO(r.detail);
  CHECK(r.ok);
}

}  // namespace

TEST_CASE("cosine similarity") {
  const std::vector<double> a = {1, 0}, b = {0, 1}, c = {-1, 0}, z = {0, 0};
  CHECK(cosine_similarity(a, a) == 1.0);
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == -1.0);
  const std::vector<double> big = {1e200, 1e200};
  CHECK(cosine_similarity(big, big) <= 1.0);
  CHECK_THROWS_AS(cosine_similarity(a, z), DomainError);
}

TEST_CASE("group centroids") {
  SUBCASE("duplicates average to themselves") {
    const auto g = group_centroids(batch_of({{0.6, 0.8}, {0.6, 0.8}}, {0, 0}, {0, 0}, 1, 1));
    REQUIRE(g.class_centroid[0]);
    CHECK(g.class_centroid[0]->isApprox(Eigen::Vector2d(0.6, 0.8)));
  }
  SUBCASE("complement of a class") {
    const auto g = group_centroids(batch_of({{1, 0}, {0, 1}}, {0, 0}, {0, 1}, 1, 2));
    REQUIRE(g.domain_minus[0][0]);
    CHECK(g.domain_minus[0][0]->isApprox(Eigen::Vector2d(0, 1)));
  }
  SUBCASE("antipodal members make a degenerate group") {
    const auto g = group_centroids(batch_of({{1, 0}, {-1, 0}}, {0, 0}, {0, 0}, 1, 1));
    CHECK_FALSE(g.class_centroid[0].has_value());
    CHECK(g.degenerate_groups > 0);
  }
  SUBCASE("ineligible samples do not count") {
    auto b = batch_of({{1, 0}, {0, 1}}, {0, 0}, {0, 0}, 1, 1);
    b.eligible[1] = false;
    const auto g = group_centroids(b);
    CHECK(g.class_centroid[0]->isApprox(Eigen::Vector2d(1, 0)));
  }
}

TEST_CASE("repel-only hand values") { report(fixclr::testing::check_hand_values()); }

TEST_CASE("repel-only loss with positives variants") {
  const double e2 = std::exp(2.0);
  SUBCASE("perfect invariance") {
    const auto b = batch_of({{1, 0}, {-1, 0}}, {0, 0}, {0, 1}, 1, 2);
    const double want = -std::log(e2 / (e2 + 2 / e2));
    CHECK(std::abs(fixclr_loss_with_positives(b, positives()).value - want) < 1e-12);
    CHECK(std::abs(fixclr_oracle(b, positives()).value - want) < 1e-12);
    CHECK(want == doctest::Approx(0.0360).epsilon(1e-3));
  }
  SUBCASE("positive equal to every negative gives log(1 + c)") {
    for (auto [x, y] : {std::pair{1.0, 0.0}, std::pair{0.6, -0.8}}) {
      const auto b = batch_of({{x, y}, {x, y}}, {0, 0}, {0, 1}, 1, 2);
      CHECK(std::abs(fixclr_loss_with_positives(b, positives()).value - std::log(3.0)) < 1e-12);
    }
  }
}

TEST_CASE("fewer than two eligible classes skip the loss") {
  auto b = batch_of({{1, 0}, {0, 1}}, {0, 1}, {0, 0}, 2, 3);
  for (const FixClrConfig& cfg : {FixClrConfig{}, positives()}) {
    const LossResult r = evaluate(b, cfg);
    CHECK(r.skipped);
    CHECK(r.value == 0.0);
    CHECK(r.grad.isZero());
    CHECK(fixclr_oracle(b, cfg).skipped);
  }
  b.eligible = {false, false};
  CHECK(fixclr_loss(b, FixClrConfig{}).skipped);
  CHECK(fixclr_oracle(b, FixClrConfig{}).value == 0.0);
}

TEST_CASE("NaN input is a numeric error") {
  auto b = batch_of({{1, 0}, {0, 1}}, {0, 0}, {0, 1}, 1, 2);
  b.vectors(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fixclr_loss(b, FixClrConfig{}), NumericError);
  CHECK_THROWS_AS(fixclr_oracle(b, FixClrConfig{}), NumericError);
}

TEST_CASE("variant entry points refuse the other variant") {
  const auto b = batch_of({{1, 0}, {0, 1}}, {0, 0}, {0, 1}, 1, 2);
  CHECK_THROWS_AS(fixclr_loss(b, positives()), ConfigError);
  CHECK_THROWS_AS(fixclr_loss_with_positives(b, FixClrConfig{}), ConfigError);
}

TEST_CASE("temperature must be positive") {
  FixClrConfig c;
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.temperature = 0.5;
  c.loss_weight = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("batch sizes beyond the oracle limit are rejected by the oracle") {
  RepresentationBatch b;
  b.vectors = Eigen::MatrixXd::Ones(513, 2);
  b.domain_ids.assign(513, 0);
  b.class_ids.assign(513, 0);
  b.eligible.assign(513, true);
  b.num_domains = 1;
  b.num_classes = 1;
  CHECK_THROWS_AS(fixclr_oracle(b, FixClrConfig{}), DomainError);
}

TEST_CASE("loss matches the scalar oracle on random batches") {
  report(fixclr::testing::check_oracle_equivalence(1000, 1));
}

TEST_CASE("analytic input gradients match central differences") {
  report(fixclr::testing::check_input_gradients(50, 2));
}

TEST_CASE("order, relabel, and rotation invariance with per-domain bounds") {
  report(fixclr::testing::check_invariances(300, 3));
}

TEST_CASE("lowering a negative similarity lowers the repel term") {
  Rng rng(4);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> sims(1 + rng.below(8));
    for (double& s : sims) s = 2 * rng.uniform() - 1;
    const TermWithPartials t = repel_term(sims, 0.5);
    for (std::size_t j = 0; j < sims.size(); ++j) {
      CHECK(t.d_negatives[j] > 0.0);
      std::vector<double> lower = sims;
      lower[j] -= 1e-6;
      CHECK(repel_term(lower, 0.5).value < t.value);
    }
  }
}

TEST_CASE("the positive similarity attracts") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> sims(1 + rng.below(8));
    for (double& s : sims) s = 2 * rng.uniform() - 1;
    const double p = 2 * rng.uniform() - 1;
    const TermWithPartials t = positive_term(p, sims, 0.5);
    CHECK(t.d_positive < 0.0);
    const double h = 1e-6;
    const double fd =
        (positive_term(p + h, sims, 0.5).value - positive_term(p - h, sims, 0.5).value) / (2 * h);
    CHECK(fd == doctest::Approx(t.d_positive).epsilon(1e-6));
  }
}

TEST_CASE("string conversions round-trip") {
  for (Variant v : {Variant::repel_only, Variant::with_positives}) {
    CHECK(variant_from_string(to_string(v)) == v);
  }
  for (SimilarityMode m : {SimilarityMode::centroid, SimilarityMode::mean_pairwise}) {
    CHECK(similarity_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(variant_from_string("attract"), ConfigError);
}
