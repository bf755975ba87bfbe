#include <benchmark/benchmark.h>

#include "fixclr/data.hpp"
#include "fixclr/fixclr_loss.hpp"
#include "fixclr/metrics.hpp"
#include "fixclr/rng.hpp"
#include "fixclr/trainer.hpp"

namespace {

using namespace fixclr;

loss::RepresentationBatch make_batch(int n, int domains, int classes, int dim) {
  Rng rng(1);
  loss::RepresentationBatch b;
  b.vectors.resize(n, dim);
  b.num_domains = domains;
  b.num_classes = classes;
  for (int s = 0; s < n; ++s) {
    for (int k = 0; k < dim; ++k) b.vectors(s, k) = rng.normal();
    b.vectors.row(s).normalize();
    b.domain_ids.push_back(s % domains);
    b.class_ids.push_back(static_cast<int>(rng.below(static_cast<std::size_t>(classes))));
    b.eligible.push_back(true);
  }
  return b;
}

void BM_FixClrLoss(benchmark::State& state) {
  const auto b = make_batch(static_cast<int>(state.range(0)), 3, 5, 32);
  loss::FixClrConfig cfg;
  cfg.similarity = static_cast<loss::SimilarityMode>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(loss::fixclr_loss(b, cfg).value);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FixClrLoss)->ArgsProduct({{96, 256, 512}, {0, 1}});

void BM_FixClrOracle(benchmark::State& state) {
  const auto b = make_batch(static_cast<int>(state.range(0)), 3, 5, 32);
  loss::FixClrConfig cfg;
  cfg.similarity = static_cast<loss::SimilarityMode>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(loss::fixclr_oracle(b, cfg).value);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FixClrOracle)->ArgsProduct({{96, 256, 512}, {0, 1}});

void BM_TrainStep(benchmark::State& state) {
  const auto ds = data::synth_generate(data::SyntheticConfig{});
  const auto split = data::leave_one_domain_out_splits(ds, 10, 0)[0];
  train::TrainConfig cfg;
  cfg.regularizer = static_cast<train::Regularizer>(state.range(0));
  train::TrainState st = train::initial_state(ds, cfg);
  data::MixedDomainSampler sampler(ds, split, cfg.batch_size, cfg.mu);
  Rng rng(2);
  std::int64_t step = 0;
  for (auto _ : state) {
    const auto batch = sampler.draw(rng);
    benchmark::DoNotOptimize(
        train::train_step(st, {ds, batch, step % 1000, 1000, 1}, cfg, rng).total);
    ++step;
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_DomainProbe(benchmark::State& state) {
  Rng rng(3);
  metrics::EmbeddingDump d;
  for (int i = 0; i < 1500; ++i) {
    metrics::EmbeddingRow r;
    r.sample_id = i;
    r.domain_id = i % 3;
    for (int k = 0; k < 32; ++k) r.coords.push_back(rng.normal() + (k == r.domain_id ? 0.5 : 0.0));
    d.rows.push_back(r);
  }
  metrics::ProbeConfig cfg;
  cfg.kind = static_cast<metrics::ProbeKind>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::domain_probe_accuracy(d, cfg));
}
BENCHMARK(BM_DomainProbe)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
