#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fixclr/error.hpp"
#include "fixclr/metrics.hpp"

namespace fixclr::metrics {

namespace {

using Extractor = std::function<std::optional<double>(const EpochRow&)>;

const std::vector<Extractor>& extractors() {
  static const std::vector<Extractor> ex = {
      [](const EpochRow& r) { return std::optional<double>(r.target_accuracy); },
      [](const EpochRow& r) { return r.pl_quality; },
      [](const EpochRow& r) { return std::optional<double>(r.pl_keep_ratio); },
      [](const EpochRow& r) { return std::optional<double>(r.domain_probe_accuracy); },
      [](const EpochRow& r) { return std::optional<double>(r.mean_loss_s); },
      [](const EpochRow& r) { return std::optional<double>(r.mean_loss_u); },
      [](const EpochRow& r) { return std::optional<double>(r.mean_loss_c); },
      [](const EpochRow& r) { return std::optional<double>(r.epoch_seconds); },
  };
  return ex;
}

MetricStats stats_of(std::vector<double> values) {
  MetricStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) {
    s.mean = s.median = s.min = s.max = std::nan("");
    return s;
  }
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  // k identical runs must report that exact value as the mean.
  if (values.front() == values.back()) s.mean = values.front();
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  s.min = values.front();
  s.max = values.back();
  return s;
}

std::string fmt(double v, const char* spec = "%.17g") {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

const std::vector<std::string>& report_metric_names() {
  static const std::vector<std::string> names = {
      "target_accuracy", "pl_quality",  "pl_keep_ratio", "domain_probe_accuracy",
      "mean_loss_s",     "mean_loss_u", "mean_loss_c",   "epoch_seconds"};
  return names;
}

RunSummary summarize_run(const std::string& method, const std::string& benchmark,
                         std::uint64_t seed, std::span<const int> targets,
                         std::span<const RunMetrics> per_target) {
  if (per_target.empty() || per_target.size() != targets.size()) {
    throw DomainError("summarize_run: need one metrics set per target");
  }
  RunSummary s;
  s.method = method;
  s.benchmark = benchmark;
  s.seed = seed;
  s.targets.assign(targets.begin(), targets.end());
  if (per_target.size() == 1) {
    if (per_target[0].epochs.empty()) throw DomainError("summarize_run: run has no epochs");
    s.final_row = per_target[0].epochs.back();
    return s;
  }
  const double k = static_cast<double>(per_target.size());
  EpochRow& avg = s.final_row;
  double quality_sum = 0.0;
  int quality_count = 0;
  for (const RunMetrics& m : per_target) {
    if (m.epochs.empty()) throw DomainError("summarize_run: run has no epochs");
    const EpochRow& r = m.epochs.back();
    avg.epoch = std::max(avg.epoch, r.epoch);
    avg.target_accuracy += r.target_accuracy / k;
    if (r.pl_quality) {
      quality_sum += *r.pl_quality;
      ++quality_count;
    }
    avg.pl_keep_ratio += r.pl_keep_ratio / k;
    avg.domain_probe_accuracy += r.domain_probe_accuracy / k;
    avg.mean_loss_s += r.mean_loss_s / k;
    avg.mean_loss_u += r.mean_loss_u / k;
    avg.mean_loss_c += r.mean_loss_c / k;
    avg.epoch_seconds += r.epoch_seconds / k;
    avg.forward_pass_total += r.forward_pass_total;
  }
  if (quality_count > 0) avg.pl_quality = quality_sum / quality_count;
  return s;
}

const ReportRow& Report::row(const std::string& method) const {
  for (const ReportRow& r : rows) {
    if (r.method == method) return r;
  }
  throw DomainError("report has no method '" + method + "'");
}

Report report(std::span<const RunSummary> runs) {
  if (runs.empty()) throw DomainError("report needs at least one run");
  Report rep;
  rep.benchmark = runs.front().benchmark;
  std::vector<std::string> methods;
  for (const RunSummary& r : runs) {
    if (r.benchmark != rep.benchmark) {
      throw DataError("report: runs come from different benchmarks (" + rep.benchmark + " vs " +
                      r.benchmark + ")");
    }
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
  }
  for (const std::string& method : methods) {
    ReportRow row;
    row.method = method;
    for (const Extractor& ex : extractors()) {
      std::vector<double> values;
      for (const RunSummary& r : runs) {
        if (r.method != method) continue;
        if (auto v = ex(r.final_row)) values.push_back(*v);
      }
      row.stats.push_back(stats_of(std::move(values)));
    }
    for (const RunSummary& r : runs) row.runs += r.method == method ? 1 : 0;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void write_report_csv(const std::filesystem::path& path, const Report& rep) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "method,runs";
  for (const std::string& name : report_metric_names()) {
    out << ',' << name << "_mean," << name << "_median," << name << "_min," << name << "_max";
  }
  out << '\n';
  for (const ReportRow& row : rep.rows) {
    out << row.method << ',' << row.runs;
    for (const MetricStats& s : row.stats) {
      out << ',' << fmt(s.mean) << ',' << fmt(s.median) << ',' << fmt(s.min) << ','
          << fmt(s.max);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string format_report_table(const Report& rep) {
  // Text table shows the headline metrics only; the CSV carries all of them.
  const std::vector<std::pair<std::string, std::size_t>> shown = {
      {"target acc", 0}, {"PL quality", 1}, {"keep ratio", 2}, {"domain probe*", 3},
      {"epoch s", 7}};
  std::ostringstream out;
  out << "benchmark " << rep.benchmark << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-24s %4s", "method", "runs");
  out << buf;
  for (const auto& [title, idx] : shown) {
    std::snprintf(buf, sizeof(buf), " | %-21s", title.c_str());
    out << buf;
  }
  out << '\n';
  for (const ReportRow& row : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %4d", row.method.c_str(), row.runs);
    out << buf;
    for (const auto& [title, idx] : shown) {
      const MetricStats& s = row.stats[idx];
      const double half_range = 0.5 * (s.max - s.min);
      std::snprintf(buf, sizeof(buf), " | %9s +/- %-7s", fmt(s.mean, "%.4f").c_str(),
                    fmt(half_range, "%.4f").c_str());
      out << buf;
    }
    out << '\n';
  }
  out << "* domain probe: cross-validated accuracy of predicting the source domain from the "
         "projected embedding (lower is more domain-invariant)\n";
  return out.str();
}

}  // namespace fixclr::metrics
