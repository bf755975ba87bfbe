#include "fixclr/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fixclr/error.hpp"
#include "fixclr/rng.hpp"

namespace fixclr::metrics {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = line.find(',');
    out.push_back(line.substr(0, comma));
    if (comma == std::string_view::npos) break;
    line.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse(std::string_view text, const std::filesystem::path& path) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError(path.string() + ": cannot parse '" + std::string(text) + "'");
  }
  return value;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::vector<std::vector<std::string_view>> read_rows(const std::filesystem::path& path,
                                                     std::vector<std::string>& storage,
                                                     std::size_t columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  while (std::getline(in, line)) {
    if (!line.empty()) storage.push_back(line);
  }
  std::vector<std::vector<std::string_view>> rows;
  for (const std::string& s : storage) {
    rows.push_back(split_csv(s));
    if (columns != 0 && rows.back().size() != columns) {
      throw DataError(path.string() + ": expected " + std::to_string(columns) + " columns");
    }
  }
  return rows;
}

int argmax_row(const MatrixXd& m, Index i) {
  int best = 0;
  for (Index k = 1; k < m.cols(); ++k) {
    if (m(i, k) > m(i, best)) best = static_cast<int>(k);
  }
  return best;
}

struct Standardizer {
  VectorXd mean;
  VectorXd scale;

  static Standardizer fit(const MatrixXd& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Index k = 0; k < x.cols(); ++k) {
      const double var = (x.col(k).array() - s.mean[k]).square().mean();
      s.scale[k] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }
  MatrixXd apply(const MatrixXd& x) const {
    MatrixXd out = x.rowwise() - mean.transpose();
    return out.array().rowwise() / scale.transpose().array();
  }
};

MatrixXd with_bias(const MatrixXd& x) {
  MatrixXd out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

MatrixXd softmax_rows(const MatrixXd& logits) {
  MatrixXd p = logits;
  for (Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

void write_epoch_csv(const std::filesystem::path& path, std::span<const EpochRow> rows) {
  auto out = open_out(path);
  out << "epoch,target_accuracy,pl_quality,pl_keep_ratio,domain_probe_accuracy,mean_loss_s,"
         "mean_loss_u,mean_loss_c,epoch_seconds,forward_pass_total\n";
  for (const EpochRow& r : rows) {
    out << r.epoch << ',' << fmt_real(r.target_accuracy) << ','
        << (r.pl_quality ? fmt_real(*r.pl_quality) : std::string("nan")) << ','
        << fmt_real(r.pl_keep_ratio) << ',' << fmt_real(r.domain_probe_accuracy) << ','
        << fmt_real(r.mean_loss_s) << ',' << fmt_real(r.mean_loss_u) << ','
        << fmt_real(r.mean_loss_c) << ',' << fmt_real(r.epoch_seconds) << ','
        << r.forward_pass_total << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<EpochRow> read_epoch_csv(const std::filesystem::path& path) {
  std::vector<std::string> storage;
  std::vector<EpochRow> rows;
  for (const auto& f : read_rows(path, storage, 10)) {
    EpochRow r;
    r.epoch = parse<int>(f[0], path);
    r.target_accuracy = parse<double>(f[1], path);
    if (f[2] != "nan") r.pl_quality = parse<double>(f[2], path);
    r.pl_keep_ratio = parse<double>(f[3], path);
    r.domain_probe_accuracy = parse<double>(f[4], path);
    r.mean_loss_s = parse<double>(f[5], path);
    r.mean_loss_u = parse<double>(f[6], path);
    r.mean_loss_c = parse<double>(f[7], path);
    r.epoch_seconds = parse<double>(f[8], path);
    r.forward_pass_total = parse<std::int64_t>(f[9], path);
    rows.push_back(r);
  }
  return rows;
}

void write_step_csv(const std::filesystem::path& path, std::span<const StepRecord> rows) {
  auto out = open_out(path);
  out << "step,epoch,loss_s,loss_u,loss_c,loss_c_raw,total,lr,keep_ratio,forward_pass_count,"
         "fixclr_skipped\n";
  for (const StepRecord& r : rows) {
    out << r.step << ',' << r.epoch << ',' << fmt_real(r.loss_s) << ',' << fmt_real(r.loss_u)
        << ',' << fmt_real(r.loss_c) << ',' << fmt_real(r.loss_c_raw) << ','
        << fmt_real(r.total) << ',' << fmt_real(r.lr) << ',' << fmt_real(r.keep_ratio) << ','
        << r.forward_pass_count << ',' << (r.fixclr_skipped ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<StepRecord> read_step_csv(const std::filesystem::path& path) {
  std::vector<std::string> storage;
  std::vector<StepRecord> rows;
  for (const auto& f : read_rows(path, storage, 11)) {
    StepRecord r;
    r.step = parse<std::int64_t>(f[0], path);
    r.epoch = parse<int>(f[1], path);
    r.loss_s = parse<double>(f[2], path);
    r.loss_u = parse<double>(f[3], path);
    r.loss_c = parse<double>(f[4], path);
    r.loss_c_raw = parse<double>(f[5], path);
    r.total = parse<double>(f[6], path);
    r.lr = parse<double>(f[7], path);
    r.keep_ratio = parse<double>(f[8], path);
    r.forward_pass_count = parse<std::int64_t>(f[9], path);
    r.fixclr_skipped = parse<int>(f[10], path) != 0;
    rows.push_back(r);
  }
  return rows;
}

double accuracy(const MatrixXd& logits, std::span<const int> truth) {
  if (logits.rows() == 0) throw DomainError("accuracy of an empty set");
  if (static_cast<std::size_t>(logits.rows()) != truth.size()) {
    throw DomainError("accuracy: truth length does not match logits");
  }
  std::size_t correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    if (argmax_row(logits, i) == truth[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

MatrixXd gather_features(const data::MultiDomainDataset& ds, std::span<const std::size_t> indices) {
  MatrixXd x(static_cast<Index>(indices.size()), ds.feature_dim());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& f = ds.sample(indices[r]).features;
    x.row(static_cast<Index>(r)) = Eigen::Map<const VectorXd>(f.data(), ds.feature_dim());
  }
  return x;
}

double target_accuracy(const model::Model& model, const data::MultiDomainDataset& ds,
                       std::span<const std::size_t> indices) {
  if (indices.empty()) throw DomainError("target_accuracy: empty target set");
  const auto fwd = model.forward(gather_features(ds, indices));
  std::vector<int> truth;
  truth.reserve(indices.size());
  for (std::size_t idx : indices) truth.push_back(ds.sample(idx).class_id);
  return accuracy(fwd.logits, truth);
}

EmbeddingDump build_embedding_dump(const model::Model& model, const data::MultiDomainDataset& ds,
                                   std::span<const std::size_t> indices,
                                   const pseudo::ThresholdPolicy* policy) {
  EmbeddingDump dump;
  if (indices.empty()) return dump;
  const auto fwd = model.forward(gather_features(ds, indices));
  std::optional<pseudo::PseudoLabelBatch> pl;
  if (policy) pl = pseudo::predict_pseudo_labels(fwd.logits, *policy);
  dump.rows.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& s = ds.sample(indices[r]);
    EmbeddingRow row;
    row.sample_id = s.sample_id;
    row.domain_id = s.domain_id;
    row.class_id = s.class_id;
    if (pl && pl->keep_mask[r]) row.pseudo_label = pl->predicted_class[r];
    const auto z = fwd.projected.row(static_cast<Index>(r));
    row.coords.resize(static_cast<std::size_t>(z.size()));
    for (Index k = 0; k < z.size(); ++k) row.coords[static_cast<std::size_t>(k)] = z(k);
    dump.rows.push_back(std::move(row));
  }
  return dump;
}

void write_embedding_dump(const std::filesystem::path& path, const EmbeddingDump& dump) {
  auto out = open_out(path);
  out << "sample_id,domain_id,class_id,pseudo_label";
  for (int k = 0; k < dump.dim(); ++k) out << ",z" << k;
  out << '\n';
  for (const EmbeddingRow& r : dump.rows) {
    if (static_cast<int>(r.coords.size()) != dump.dim()) {
      throw DomainError("embedding dump rows must share one coordinate count");
    }
    out << r.sample_id << ',' << r.domain_id << ',' << r.class_id << ',' << r.pseudo_label;
    for (double v : r.coords) out << ',' << fmt_real(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

EmbeddingDump read_embedding_dump(const std::filesystem::path& path) {
  std::vector<std::string> storage;
  EmbeddingDump dump;
  for (const auto& f : read_rows(path, storage, 0)) {
    if (f.size() < 4) throw DataError(path.string() + ": embedding row too short");
    EmbeddingRow r;
    r.sample_id = parse<data::SampleId>(f[0], path);
    r.domain_id = parse<int>(f[1], path);
    r.class_id = parse<int>(f[2], path);
    r.pseudo_label = parse<int>(f[3], path);
    for (std::size_t k = 4; k < f.size(); ++k) r.coords.push_back(parse<double>(f[k], path));
    if (!dump.rows.empty() && r.coords.size() != dump.rows.front().coords.size()) {
      throw DataError(path.string() + ": inconsistent coordinate count");
    }
    dump.rows.push_back(std::move(r));
  }
  return dump;
}

EmbeddingDump export_embeddings(const model::Model& model, const data::MultiDomainDataset& ds,
                                std::span<const std::size_t> indices,
                                const std::filesystem::path& path,
                                const pseudo::ThresholdPolicy* policy) {
  EmbeddingDump dump = build_embedding_dump(model, ds, indices, policy);
  write_embedding_dump(path, dump);
  return dump;
}

std::string to_string(ProbeKind k) { return k == ProbeKind::linear ? "linear" : "centroid"; }

ProbeKind probe_kind_from_string(const std::string& s) {
  if (s == "linear") return ProbeKind::linear;
  if (s == "centroid") return ProbeKind::centroid;
  throw ConfigError("unknown probe kind '" + s + "'");
}

MatrixXd SoftmaxClassifier::logits(const MatrixXd& x) const { return with_bias(x) * weights; }

SoftmaxClassifier fit_softmax_classifier(const MatrixXd& x, std::span<const int> labels,
                                         int num_classes, const ProbeConfig& cfg) {
  const MatrixXd xb = with_bias(x);
  const double n = static_cast<double>(xb.rows());
  MatrixXd onehot = MatrixXd::Zero(xb.rows(), num_classes);
  for (Index i = 0; i < xb.rows(); ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  // Softmax cross-entropy curvature is bounded by half the feature Gram's
  // top eigenvalue.
  const MatrixXd gram = xb.transpose() * xb / n;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lipschitz = 0.5 * eig.eigenvalues().maxCoeff() + cfg.l2;
  const double step = 1.0 / lipschitz;

  auto gradient = [&](const MatrixXd& w) {
    MatrixXd g = xb.transpose() * (softmax_rows(xb * w) - onehot) / n;
    g.topRows(xb.cols() - 1) += cfg.l2 * w.topRows(xb.cols() - 1);
    return g;
  };

  SoftmaxClassifier clf;
  clf.weights = MatrixXd::Zero(xb.cols(), num_classes);
  MatrixXd previous = clf.weights;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const double momentum = static_cast<double>(it - 1) / static_cast<double>(it + 2);
    const MatrixXd lookahead = clf.weights + momentum * (clf.weights - previous);
    const MatrixXd g = gradient(lookahead);
    previous = clf.weights;
    clf.weights = lookahead - step * g;
    clf.iterations = it;
    clf.gradient_norm = g.norm();
    if (clf.gradient_norm < cfg.tolerance) break;
  }
  return clf;
}

double domain_probe_accuracy(const EmbeddingDump& dump, const ProbeConfig& cfg) {
  if (cfg.folds < 2) throw ConfigError("domain probe needs at least 2 folds");
  std::vector<int> domains;
  for (const auto& r : dump.rows) domains.push_back(r.domain_id);
  std::vector<int> distinct = domains;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw DomainError("domain probe needs at least 2 domains");
  if (dump.rows.size() < static_cast<std::size_t>(cfg.folds) * distinct.size()) {
    throw DomainError("domain probe needs at least folds * domains rows");
  }

  // Dense labels 0..K-1 in ascending domain order.
  std::vector<int> labels(domains.size());
  for (std::size_t i = 0; i < domains.size(); ++i) {
    labels[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), domains[i]) -
                                 distinct.begin());
  }
  const int K = static_cast<int>(distinct.size());
  const auto n = static_cast<Index>(dump.rows.size());
  MatrixXd x(n, dump.dim());
  for (Index i = 0; i < n; ++i) {
    for (int k = 0; k < dump.dim(); ++k) x(i, k) = dump.rows[static_cast<std::size_t>(i)].coords[static_cast<std::size_t>(k)];
  }

  std::vector<std::size_t> order(dump.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, 0x70726f6265ULL));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<int> fold(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) fold[order[r]] = static_cast<int>(r % cfg.folds);

  std::size_t correct = 0;
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    MatrixXd xtr = x(train, Eigen::all);
    MatrixXd xte = x(test, Eigen::all);
    std::vector<int> ytr;
    for (Index i : train) ytr.push_back(labels[static_cast<std::size_t>(i)]);
    const Standardizer st = Standardizer::fit(xtr);
    xtr = st.apply(xtr);
    xte = st.apply(xte);

    MatrixXd scores;
    if (cfg.kind == ProbeKind::linear) {
      scores = fit_softmax_classifier(xtr, ytr, K, cfg).logits(xte);
    } else {
      MatrixXd centroids = MatrixXd::Zero(K, xtr.cols());
      std::vector<int> counts(static_cast<std::size_t>(K), 0);
      for (std::size_t r = 0; r < train.size(); ++r) {
        centroids.row(ytr[r]) += xtr.row(static_cast<Index>(r));
        ++counts[static_cast<std::size_t>(ytr[r])];
      }
      scores.resize(xte.rows(), K);
      for (int k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] == 0) {
          scores.col(k).setConstant(-std::numeric_limits<double>::infinity());
          continue;
        }
        centroids.row(k) /= counts[static_cast<std::size_t>(k)];
        for (Index i = 0; i < xte.rows(); ++i) {
          scores(i, k) = -(xte.row(i) - centroids.row(k)).squaredNorm();
        }
      }
    }
    for (std::size_t r = 0; r < test.size(); ++r) {
      if (argmax_row(scores, static_cast<Index>(r)) == labels[static_cast<std::size_t>(test[r])]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace fixclr::metrics
