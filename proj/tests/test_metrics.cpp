#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "fixclr/error.hpp"
#include "fixclr/metrics.hpp"
#include "fixclr/rng.hpp"
#include "fixtures.hpp"
#include "temp_dir.hpp"

using namespace fixclr;
using namespace fixclr::metrics;

namespace {

EmbeddingDump gaussian_dump(Rng& rng, int domains, int per_domain, int dim, double shift) {
  EmbeddingDump d;
  data::SampleId id = 0;
  for (int k = 0; k < domains; ++k) {
    for (int i = 0; i < per_domain; ++i) {
      EmbeddingRow r;
      r.sample_id = id++;
      r.domain_id = k;
      r.coords.resize(static_cast<std::size_t>(dim));
      for (int c = 0; c < dim; ++c) r.coords[static_cast<std::size_t>(c)] = rng.normal();
      r.coords[static_cast<std::size_t>(k % dim)] += shift;
      d.rows.push_back(r);
    }
  }
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

RunSummary summary(const std::string& method, std::uint64_t seed, double acc) {
  RunSummary s;
  s.method = method;
  s.benchmark = "b";
  s.seed = seed;
  s.targets = {0};
  s.final_row.epoch = 3;
  s.final_row.target_accuracy = acc;
  s.final_row.pl_quality = 0.9;
  s.final_row.pl_keep_ratio = 0.4;
  s.final_row.domain_probe_accuracy = 0.5;
  return s;
}

}  // namespace

TEST_CASE("accuracy of constant and perfect predictions") {
  std::vector<int> truth;
  for (int c = 0; c < 10; ++c) truth.insert(truth.end(), 5, c);
  Eigen::MatrixXd constant = Eigen::MatrixXd::Zero(50, 10);
  constant.col(0).setConstant(1.0);
  CHECK(accuracy(constant, truth) == 0.1);
  Eigen::MatrixXd perfect = Eigen::MatrixXd::Zero(50, 10);
  for (int i = 0; i < 50; ++i) perfect(i, truth[static_cast<std::size_t>(i)]) = 1.0;
  CHECK(accuracy(perfect, truth) == 1.0);
  CHECK_THROWS_AS(accuracy(Eigen::MatrixXd(0, 10), {}), DomainError);
}

TEST_CASE("the probe separates one-hot domain embeddings") {
  EmbeddingDump d;
  for (int i = 0; i < 90; ++i) {
    EmbeddingRow r;
    r.sample_id = i;
    r.domain_id = i % 3;
    r.coords = {0, 0, 0};
    r.coords[static_cast<std::size_t>(r.domain_id)] = 1.0;
    d.rows.push_back(r);
  }
  CHECK(domain_probe_accuracy(d, {}) >= 0.99);
  ProbeConfig centroid;
  centroid.kind = ProbeKind::centroid;
  CHECK(domain_probe_accuracy(d, centroid) >= 0.99);
}

TEST_CASE("the probe finds partial domain structure") {
  Rng rng(1);
  const double acc = domain_probe_accuracy(gaussian_dump(rng, 3, 100, 6, 1.5), {});
  CHECK(acc > 0.6);
  CHECK(acc < 0.95);
}

TEST_CASE("the probe reports chance on label-shuffled embeddings") {
  Rng rng(2);
  const int shuffles = 24;
  const int domains = 3;
  std::vector<double> acc;
  for (int k = 0; k < shuffles; ++k) {
    EmbeddingDump d = gaussian_dump(rng, domains, 60, 6, 2.0);
    std::vector<int> ids;
    for (const auto& r : d.rows) ids.push_back(r.domain_id);
    rng.shuffle(std::span<int>(ids));
    for (std::size_t i = 0; i < ids.size(); ++i) d.rows[i].domain_id = ids[i];
    ProbeConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(k);
    acc.push_back(domain_probe_accuracy(d, cfg));
  }
  const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / shuffles;
  double var = 0;
  for (double a : acc) var += (a - mean) * (a - mean);
  const double se = std::sqrt(var / (shuffles - 1)) / std::sqrt(static_cast<double>(shuffles));
  INFO("mean " << mean << " se " << se);
  CHECK(std::abs(mean - 1.0 / domains) <= 3 * se);
}

TEST_CASE("identical embeddings carry no domain information") {
  EmbeddingDump d;
  for (int i = 0; i < 120; ++i) d.rows.push_back({i, i % 4, 0, -1, {0.3, -0.2}});
  for (ProbeKind kind : {ProbeKind::linear, ProbeKind::centroid}) {
    ProbeConfig cfg;
    cfg.kind = kind;
    CHECK(domain_probe_accuracy(d, cfg) <= 0.25 + 0.05);
  }
}

TEST_CASE("probe preconditions") {
  EmbeddingDump one;
  for (int i = 0; i < 20; ++i) one.rows.push_back({i, 0, 0, -1, {1.0}});
  CHECK_THROWS_AS(domain_probe_accuracy(one, {}), DomainError);
  EmbeddingDump few;
  for (int i = 0; i < 8; ++i) few.rows.push_back({i, i % 2, 0, -1, {1.0}});
  CHECK_THROWS_AS(domain_probe_accuracy(few, {}), DomainError);
}

TEST_CASE("the linear probe converges on separable data") {
  Rng rng(3);
  Eigen::MatrixXd x(200, 2);
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    y.push_back(i % 2);
    x(i, 0) = rng.normal() + (i % 2 ? 3.0 : -3.0);
    x(i, 1) = rng.normal();
  }
  ProbeConfig cfg;
  cfg.l2 = 1e-2;
  cfg.max_iterations = 5000;
  const SoftmaxClassifier clf = fit_softmax_classifier(x, y, 2, cfg);
  CHECK(clf.gradient_norm <= cfg.tolerance);
  CHECK(accuracy(clf.logits(x), y) > 0.98);
}

TEST_CASE("embedding export") {
  fixclr::testing::TempDir tmp;
  const auto ds = data::synth_generate(fixclr::testing::tiny_synthetic());
  const model::Model m(fixclr::testing::tiny_train().architecture, 1);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  pseudo::ThresholdPolicy policy;
  policy.fixed_value = 0.34;
  const EmbeddingDump d = export_embeddings(m, ds, idx, tmp.path() / "a.csv", &policy);
  export_embeddings(m, ds, idx, tmp.path() / "b.csv", &policy);

  CHECK(d.rows.size() == ds.size());
  CHECK(d.dim() == 8);
  const std::string a = slurp(tmp.path() / "a.csv");
  CHECK(a == slurp(tmp.path() / "b.csv"));
  CHECK(std::count(a.begin(), a.end(), '\n') == static_cast<long>(ds.size()) + 1);
  CHECK(a.rfind("sample_id,domain_id,class_id,pseudo_label,z0,", 0) == 0);

  const EmbeddingDump back = read_embedding_dump(tmp.path() / "a.csv");
  REQUIRE(back.rows.size() == d.rows.size());
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    CHECK(back.rows[i].coords == d.rows[i].coords);
    CHECK(back.rows[i].pseudo_label == d.rows[i].pseudo_label);
  }
  CHECK_THROWS_AS(export_embeddings(m, ds, idx, tmp.path() / "no" / "such" / "dir.csv"), IoError);
}

TEST_CASE("metrics CSVs round-trip") {
  fixclr::testing::TempDir tmp;
  std::vector<EpochRow> rows(2);
  rows[0].epoch = 1;
  rows[0].target_accuracy = 0.1234567890123;
  rows[1].epoch = 2;
  rows[1].pl_quality = 0.75;
  rows[1].domain_probe_accuracy = std::nan("");
  write_epoch_csv(tmp.path() / "m.csv", rows);
  const auto back = read_epoch_csv(tmp.path() / "m.csv");
  REQUIRE(back.size() == 2u);
  CHECK(back[0].target_accuracy == rows[0].target_accuracy);
  CHECK_FALSE(back[0].pl_quality.has_value());
  CHECK(back[1].pl_quality.value() == 0.75);
  CHECK(std::isnan(back[1].domain_probe_accuracy));

  std::vector<StepRecord> steps(1);
  steps[0].lr = 0.003;
  steps[0].forward_pass_count = 144;
  steps[0].fixclr_skipped = true;
  write_step_csv(tmp.path() / "s.csv", steps);
  const auto sback = read_step_csv(tmp.path() / "s.csv");
  CHECK(sback[0].lr == 0.003);
  CHECK(sback[0].forward_pass_count == 144);
  CHECK(sback[0].fixclr_skipped);
}

TEST_CASE("report of one run equals its final row") {
  const RunSummary s = summary("fixclr", 0, 0.8125);
  const Report rep = report(std::span<const RunSummary>(&s, 1));
  const ReportRow& row = rep.row("fixclr");
  CHECK(row.runs == 1);
  CHECK(row.stats[0].mean == 0.8125);
  CHECK(row.stats[0].min == row.stats[0].max);
  CHECK(row.stats[1].mean == 0.9);
}

TEST_CASE("identical runs have zero range and an exact mean") {
  const std::vector<RunSummary> runs(5, summary("none", 0, 0.1));
  const Report rep = report(runs);
  const auto& st = rep.row("none").stats[0];
  CHECK(st.mean == 0.1);
  CHECK(st.max - st.min == 0.0);
  CHECK(st.median == 0.1);
}

TEST_CASE("report groups methods and takes medians") {
  std::vector<RunSummary> runs = {summary("none", 0, 0.5), summary("fixclr", 0, 0.7),
                                  summary("none", 1, 0.6), summary("fixclr", 1, 0.9),
                                  summary("fixclr", 2, 0.8)};
  const Report rep = report(runs);
  REQUIRE(rep.rows.size() == 2u);
  CHECK(rep.rows[0].method == "none");
  CHECK(rep.row("fixclr").stats[0].median == doctest::Approx(0.8));
  CHECK(rep.row("none").stats[0].mean == doctest::Approx(0.55));
  const std::string table = format_report_table(rep);
  CHECK(table.find("fixclr") != std::string::npos);
  fixclr::testing::TempDir tmp;
  write_report_csv(tmp.path() / "r.csv", rep);
  CHECK(std::filesystem::file_size(tmp.path() / "r.csv") > 0u);
}

TEST_CASE("report rejects mixed benchmarks and empty input") {
  std::vector<RunSummary> runs = {summary("none", 0, 0.5), summary("none", 1, 0.5)};
  runs[1].benchmark = "other";
  CHECK_THROWS_AS(report(runs), DataError);
  CHECK_THROWS_AS(report(std::vector<RunSummary>{}), DomainError);
}

TEST_CASE("summaries average the final rows across targets") {
  std::vector<RunMetrics> per(2);
  per[0].epochs.resize(2);
  per[1].epochs.resize(2);
  per[0].epochs[1].target_accuracy = 0.6;
  per[1].epochs[1].target_accuracy = 0.8;
  per[0].epochs[1].pl_quality = 1.0;
  const std::vector<int> targets = {0, 1};
  const RunSummary s = summarize_run("m", "b", 0, targets, per);
  CHECK(s.final_row.target_accuracy == doctest::Approx(0.7));
  CHECK(s.final_row.pl_quality.value() == 1.0);
}
