#include "fixclr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "fixclr/error.hpp"

namespace fixclr::train {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd augmented_inputs(const data::MultiDomainDataset& ds,
                          const std::vector<std::size_t>& indices,
                          const augment::AugmentationPolicy& policy, Rng& rng) {
  MatrixXd x(static_cast<Index>(indices.size()), ds.feature_dim());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto view = augment::apply(ds.sample(indices[r]).features, policy, rng);
    x.row(static_cast<Index>(r)) = Eigen::Map<const VectorXd>(view.data(), ds.feature_dim());
  }
  return x;
}

// Row-wise log-softmax.
MatrixXd log_softmax(const MatrixXd& logits) {
  MatrixXd out = logits;
  for (Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

}  // namespace

std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::fixclr: return "fixclr";
    case Regularizer::fixclr_with_positives: return "fixclr_with_positives";
  }
  return "none";
}

Regularizer regularizer_from_string(const std::string& s) {
  if (s == "none") return Regularizer::none;
  if (s == "fixclr") return Regularizer::fixclr;
  if (s == "fixclr_with_positives") return Regularizer::fixclr_with_positives;
  throw ConfigError("unknown regularizer '" + s + "' (expected none, fixclr, fixclr_with_positives)");
}

std::string to_string(FeatureSource f) {
  return f == FeatureSource::projection ? "projection" : "representation";
}

FeatureSource feature_source_from_string(const std::string& s) {
  if (s == "projection") return FeatureSource::projection;
  if (s == "representation") return FeatureSource::representation;
  throw ConfigError("unknown feature source '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (steps_per_epoch < 0) throw ConfigError("train.steps_per_epoch must be >= 0");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (mu < 1) throw ConfigError("train.mu must be positive");
  if (probe_every < 1) throw ConfigError("train.probe_every must be >= 1");
  if (probe.folds < 2) throw ConfigError("probe.folds must be >= 2");
  if (ema) throw ConfigError("parameter EMA is reserved and not available");
  fixclr.validate();
  threshold.validate();
  augmentation.validate();
}

loss::FixClrConfig effective_fixclr(const TrainConfig& cfg) {
  loss::FixClrConfig c = cfg.fixclr;
  c.variant = cfg.regularizer == Regularizer::fixclr_with_positives ? loss::Variant::with_positives
                                                                    : loss::Variant::repel_only;
  return c;
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps < 1) throw DomainError("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) {
    throw DomainError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  }
  if (step == total_steps) return 0.0;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void SgdMomentum::step(VectorXd& params, const VectorXd& grad, double lr, double momentum,
                       double weight_decay) {
  if (velocity_.size() != params.size()) velocity_ = VectorXd::Zero(params.size());
  velocity_ = momentum * velocity_ + grad + weight_decay * params;
  params -= lr * velocity_;
}

TrainState initial_state(const data::MultiDomainDataset& ds, const TrainConfig& cfg) {
  model::Architecture arch = cfg.architecture;
  arch.input_dim = ds.feature_dim();
  arch.num_classes = ds.num_classes();
  TrainState st;
  st.model = model::Model(arch, derive_seed(cfg.seed, 0x6d6f64656cULL));
  st.optimizer = SgdMomentum(static_cast<Index>(st.model.parameter_count()));
  return st;
}

namespace {

[[noreturn]] void throw_non_finite(const metrics::StepRecord& rec) {
  std::ostringstream msg;
  msg.precision(17);
  msg << "non-finite loss at step " << rec.step << " (epoch " << rec.epoch
      << "): L_S=" << rec.loss_s << " L_U=" << rec.loss_u << " L_C=" << rec.loss_c
      << " lr=" << rec.lr;
  throw NumericError(msg.str());
}

bool finite_outputs(const model::ForwardBatch& f) {
  return f.logits.allFinite() && f.projected.allFinite() && f.representation.allFinite();
}

}  // namespace

metrics::StepRecord train_step(TrainState& state, const StepInputs& in, const TrainConfig& cfg,
                               Rng& rng) {
  const auto& ds = in.dataset;
  const auto& labeled = in.batch.labeled;
  const auto& unlabeled = in.batch.unlabeled;
  if (labeled.empty()) throw DomainError("train_step: empty labeled batch");

  const MatrixXd x_labeled = augmented_inputs(ds, labeled, cfg.augmentation.weak, rng);
  const MatrixXd x_weak = augmented_inputs(ds, unlabeled, cfg.augmentation.weak, rng);
  const MatrixXd x_strong = augmented_inputs(ds, unlabeled, cfg.augmentation.strong, rng);

  CountingForward forward(state.model);
  const model::ForwardBatch f_labeled = forward(x_labeled);
  const model::ForwardBatch f_weak = forward(x_weak);  // pseudo-labels only, no gradient
  const model::ForwardBatch f_strong = forward(x_strong);

  metrics::StepRecord rec;
  rec.step = in.step;
  rec.epoch = in.epoch;
  rec.forward_pass_count = forward.count();
  rec.lr = cosine_lr(in.step, in.total_steps, cfg.base_lr);

  // Supervised term.
  const auto n_l = static_cast<Index>(labeled.size());
  const MatrixXd logp_l = log_softmax(f_labeled.logits);
  MatrixXd dlogits_l = logp_l.array().exp();
  for (Index r = 0; r < n_l; ++r) {
    const int y = ds.sample(labeled[static_cast<std::size_t>(r)]).class_id;
    rec.loss_s -= logp_l(r, y);
    dlogits_l(r, y) -= 1.0;
  }
  rec.loss_s /= static_cast<double>(n_l);
  dlogits_l /= static_cast<double>(n_l);

  if (!std::isfinite(rec.loss_s) || !finite_outputs(f_labeled) || !finite_outputs(f_weak) ||
      !finite_outputs(f_strong)) {
    throw_non_finite(rec);
  }

  // Pseudo-labels from the weak view, consistency on the strong view.
  std::vector<MatrixXd> history(state.logit_history.begin(), state.logit_history.end());
  const pseudo::PseudoLabelBatch pl =
      unlabeled.empty() ? pseudo::PseudoLabelBatch{}
                        : pseudo::predict_pseudo_labels(f_weak.logits, cfg.threshold, history,
                                                        in.step);
  if (cfg.threshold.history_length > 0 && !unlabeled.empty()) {
    state.logit_history.push_back(f_weak.logits);
    while (static_cast<int>(state.logit_history.size()) > cfg.threshold.history_length) {
      state.logit_history.pop_front();
    }
  }
  const std::size_t kept = pl.kept();
  rec.keep_ratio = unlabeled.empty() ? 0.0 : pseudo::keep_ratio(pl);
  MatrixXd dlogits_u = MatrixXd::Zero(f_strong.logits.rows(), f_strong.logits.cols());
  if (kept > 0) {
    const MatrixXd logp_u = log_softmax(f_strong.logits);
    for (std::size_t r = 0; r < pl.size(); ++r) {
      if (!pl.keep_mask[r]) continue;
      const auto row = static_cast<Index>(r);
      const double w = pl.weight[r] / static_cast<double>(kept);
      rec.loss_u -= w * logp_u(row, pl.predicted_class[r]);
      dlogits_u.row(row) = w * logp_u.row(row).array().exp();
      dlogits_u(row, pl.predicted_class[r]) -= w;
    }
  }

  // Regularizer over labeled weak views and kept strong views.
  MatrixXd dproj_l, dproj_u, drep_l, drep_u;
  if (cfg.regularizer != Regularizer::none) {
    const loss::FixClrConfig lc = effective_fixclr(cfg);
    const Index n_u = static_cast<Index>(unlabeled.size());
    VectorXd norms_l, norms_u;
    MatrixXd v_l, v_u;
    if (cfg.features == FeatureSource::projection) {
      v_l = f_labeled.projected;
      v_u = f_strong.projected;
    } else {
      v_l = model::normalize_rows(f_labeled.representation, &norms_l);
      v_u = model::normalize_rows(f_strong.representation, &norms_u);
    }
    loss::RepresentationBatch rb;
    rb.num_domains = ds.num_domains();
    rb.num_classes = ds.num_classes();
    rb.vectors.resize(n_l + n_u, v_l.cols());
    rb.vectors.topRows(n_l) = v_l;
    rb.vectors.bottomRows(n_u) = v_u;
    for (std::size_t idx : labeled) {
      rb.domain_ids.push_back(ds.sample(idx).domain_id);
      rb.class_ids.push_back(ds.sample(idx).class_id);
      rb.eligible.push_back(true);
    }
    for (std::size_t r = 0; r < unlabeled.size(); ++r) {
      rb.domain_ids.push_back(ds.sample(unlabeled[r]).domain_id);
      rb.class_ids.push_back(pl.predicted_class[r]);
      rb.eligible.push_back(pl.keep_mask[r]);
    }
    const loss::LossResult res = loss::evaluate(rb, lc);
    rec.loss_c_raw = res.value;
    rec.loss_c = lc.loss_weight * res.value;
    rec.fixclr_skipped = res.skipped;
    const MatrixXd dv = lc.loss_weight * res.grad;
    if (cfg.features == FeatureSource::projection) {
      dproj_l = dv.topRows(n_l);
      dproj_u = dv.bottomRows(n_u);
    } else {
      drep_l = model::normalize_rows_backward(v_l, norms_l, dv.topRows(n_l));
      drep_u = model::normalize_rows_backward(v_u, norms_u, dv.bottomRows(n_u));
    }
  }
  rec.total = rec.loss_s + rec.loss_u + rec.loss_c;

  auto ptr = [](const MatrixXd& m) { return m.size() == 0 ? nullptr : &m; };
  VectorXd grad = state.model.backward(f_labeled, &dlogits_l, ptr(dproj_l), ptr(drep_l));
  if (!unlabeled.empty()) {
    grad += state.model.backward(f_strong, &dlogits_u, ptr(dproj_u), ptr(drep_u));
  }

  if (!std::isfinite(rec.total) || !grad.allFinite()) throw_non_finite(rec);
  state.optimizer.step(state.model.parameters(), grad, rec.lr, cfg.momentum, cfg.weight_decay);
  if (!state.model.parameters().allFinite()) throw_non_finite(rec);
  return rec;
}

std::int64_t resolve_steps_per_epoch(const data::SplitSpec& split, const TrainConfig& cfg) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  const auto per_step = static_cast<std::int64_t>(cfg.mu) * cfg.batch_size;
  const auto n = static_cast<std::int64_t>(split.unlabeled_ids.size());
  return std::max<std::int64_t>(1, (n + per_step - 1) / per_step);
}

EpochEvaluation evaluate_epoch(const model::Model& model, const data::MultiDomainDataset& ds,
                               const data::SplitSpec& split, const TrainConfig& cfg,
                               bool run_probe) {
  EpochEvaluation ev;
  const auto target = data::target_indices(ds, split);
  ev.target_accuracy = metrics::target_accuracy(model, ds, target);

  std::vector<std::size_t> unlabeled;
  for (data::SampleId id : split.unlabeled_ids) unlabeled.push_back(ds.index_of(id));
  if (!unlabeled.empty()) {
    const auto fwd = model.forward(metrics::gather_features(ds, unlabeled));
    const auto pl = pseudo::predict_pseudo_labels(fwd.logits, cfg.threshold);
    std::vector<int> truth;
    for (std::size_t idx : unlabeled) truth.push_back(ds.sample(idx).class_id);
    ev.pl_keep_ratio = pseudo::keep_ratio(pl);
    ev.pl_quality = pseudo::pseudo_label_quality(pl, truth);
  }

  if (run_probe) {
    std::vector<std::size_t> source;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.sample(i).domain_id != split.target_domain) source.push_back(i);
    }
    const auto dump = metrics::build_embedding_dump(model, ds, source);
    ev.domain_probe_accuracy = metrics::domain_probe_accuracy(dump, cfg.probe);
  }
  return ev;
}

FitResult fit(const data::MultiDomainDataset& ds, const data::SplitSpec& split,
              const TrainConfig& cfg, FitOptions options) {
  cfg.validate();
  FitResult result{options.resume ? std::move(*options.resume) : initial_state(ds, cfg)};
  TrainState& st = result.state;
  const std::int64_t steps = resolve_steps_per_epoch(split, cfg);
  const std::int64_t total_steps = steps * cfg.epochs;
  // Surface sampler configuration errors before any work.
  data::MixedDomainSampler(ds, split, cfg.batch_size, cfg.mu);

  for (int epoch = st.completed_epochs + 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x65706f6368ULL + static_cast<std::uint64_t>(epoch)));
    data::MixedDomainSampler sampler(ds, split, cfg.batch_size, cfg.mu);

    metrics::EpochRow row;
    row.epoch = epoch;
    const auto start = std::chrono::steady_clock::now();
    for (std::int64_t s = 0; s < steps; ++s) {
      const data::MixedBatch batch = sampler.draw(rng);
      const StepInputs in{ds, batch, st.global_step, total_steps, epoch};
      const metrics::StepRecord rec = train_step(st, in, cfg, rng);
      ++st.global_step;
      row.mean_loss_s += rec.loss_s;
      row.mean_loss_u += rec.loss_u;
      row.mean_loss_c += rec.loss_c;
      row.forward_pass_total += rec.forward_pass_count;
      st.metrics.steps.push_back(rec);
    }
    row.epoch_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.mean_loss_s /= static_cast<double>(steps);
    row.mean_loss_u /= static_cast<double>(steps);
    row.mean_loss_c /= static_cast<double>(steps);

    const bool probe = epoch == cfg.epochs || epoch % cfg.probe_every == 0;
    const EpochEvaluation ev = evaluate_epoch(st.model, ds, split, cfg, probe);
    row.target_accuracy = ev.target_accuracy;
    row.pl_quality = ev.pl_quality;
    row.pl_keep_ratio = ev.pl_keep_ratio;
    row.domain_probe_accuracy = ev.domain_probe_accuracy.value_or(std::nan(""));
    st.metrics.epochs.push_back(row);
    st.completed_epochs = epoch;

    if (options.on_epoch_end) options.on_epoch_end(st);
    if (options.stop_after_epoch > 0 && epoch >= options.stop_after_epoch) break;
  }
  return result;
}

}  // namespace fixclr::train
