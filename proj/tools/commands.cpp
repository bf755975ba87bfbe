#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <sstream>

#include "experiment.hpp"
#include "fixclr/error.hpp"
#include "fixclr/model.hpp"
#include "fixclr/trainer.hpp"
#include "fixclr/version.hpp"

namespace fixclr::cli {

namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

bool non_empty_dir(const fs::path& p) {
  return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p);
}

std::vector<int> parse_targets(const std::string& target, int num_domains) {
  std::vector<int> out;
  if (target == "all") {
    for (int d = 0; d < num_domains; ++d) out.push_back(d);
    return out;
  }
  int t = -1;
  try {
    std::size_t used = 0;
    t = std::stoi(target, &used);
    if (used != target.size()) t = -1;
  } catch (const std::exception&) {
    t = -1;
  }
  if (t < 0 || t >= num_domains) {
    throw ConfigError("target must be 'all' or a domain index in [0, " +
                      std::to_string(num_domains) + "), got '" + target + "'");
  }
  out.push_back(t);
  return out;
}

fs::path target_dir(const fs::path& run, int t) { return run / ("target_" + std::to_string(t)); }

model::Checkpoint make_checkpoint(const train::TrainState& st, const train::TrainConfig& cfg,
                                  int target, const char* kind, const Eigen::VectorXd& values) {
  model::Checkpoint c;
  c.architecture = st.model.architecture();
  c.seed = cfg.seed;
  c.epoch = st.completed_epochs;
  c.parameters = values;
  c.extra = {{"kind", kind},
             {"target", target},
             {"global_step", st.global_step},
             {"regularizer", train::to_string(cfg.regularizer)}};
  return c;
}

void save_state(const fs::path& dir, const train::TrainState& st, const train::TrainConfig& cfg,
                int target) {
  model::write_checkpoint(dir / "model.ckpt",
                          make_checkpoint(st, cfg, target, "model", st.model.parameters()));
  Eigen::VectorXd velocity = st.optimizer.velocity();
  if (velocity.size() != st.model.parameters().size()) {
    velocity = Eigen::VectorXd::Zero(st.model.parameters().size());
  }
  model::write_checkpoint(dir / "optimizer.ckpt",
                          make_checkpoint(st, cfg, target, "sgd_momentum_velocity", velocity));
  metrics::write_epoch_csv(dir / "metrics.csv", st.metrics.epochs);
  metrics::write_step_csv(dir / "steps.csv", st.metrics.steps);
}

std::optional<train::TrainState> load_state(const fs::path& dir, const train::TrainConfig& cfg,
                                            const data::MultiDomainDataset& ds,
                                            const data::SplitSpec& split) {
  if (!fs::exists(dir / "model.ckpt")) return std::nullopt;
  const model::Checkpoint m = model::read_checkpoint(dir / "model.ckpt");
  const model::Checkpoint o = model::read_checkpoint(dir / "optimizer.ckpt");
  train::TrainState st = train::initial_state(ds, cfg);
  if (!(m.architecture == st.model.architecture())) {
    throw ConfigError("checkpoint in " + dir.string() + " has a different architecture");
  }
  if (m.epoch != o.epoch) throw DataError("model and optimizer checkpoints disagree on epoch");
  st.model = model::Model(m.architecture, m.parameters);
  st.optimizer.velocity() = o.parameters;
  st.completed_epochs = m.epoch;
  st.global_step = static_cast<std::int64_t>(m.epoch) * train::resolve_steps_per_epoch(split, cfg);
  if (m.epoch > 0) {
    for (const auto& r : metrics::read_epoch_csv(dir / "metrics.csv")) {
      if (r.epoch <= m.epoch) st.metrics.epochs.push_back(r);
    }
    for (const auto& r : metrics::read_step_csv(dir / "steps.csv")) {
      if (r.epoch <= m.epoch) st.metrics.steps.push_back(r);
    }
  }
  if (static_cast<std::int64_t>(st.metrics.steps.size()) != st.global_step) {
    throw DataError("steps.csv in " + dir.string() + " does not match the checkpoint epoch");
  }
  return st;
}

void write_summary(const fs::path& run, const std::vector<int>& targets,
                   const std::vector<metrics::RunMetrics>& per_target,
                   const metrics::RunSummary& mean, std::ostream& log, bool quiet) {
  std::ofstream out(run / "summary.csv", std::ios::trunc);
  if (!out) throw IoError("cannot write summary.csv in " + run.string());
  out << "target,epoch,target_accuracy,pl_quality,pl_keep_ratio,domain_probe_accuracy,"
         "epoch_seconds\n";
  auto line = [&](const std::string& name, const metrics::EpochRow& r) {
    std::ostringstream s;
    s.precision(17);
    s << name << ',' << r.epoch << ',' << r.target_accuracy << ','
      << (r.pl_quality ? std::to_string(*r.pl_quality) : std::string("nan")) << ','
      << r.pl_keep_ratio << ',' << r.domain_probe_accuracy << ',' << r.epoch_seconds;
    return s.str();
  };
  for (std::size_t k = 0; k < targets.size(); ++k) {
    out << line(std::to_string(targets[k]), per_target[k].epochs.back()) << '\n';
  }
  out << line("mean", mean.final_row) << '\n';
  if (!quiet) {
    char buf[160];
    log << "target  accuracy  pl_quality  keep_ratio  domain_probe\n";
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const auto& r = per_target[k].epochs.back();
      std::snprintf(buf, sizeof(buf), "%6d  %8.4f  %10.4f  %10.4f  %12.4f\n", targets[k],
                    r.target_accuracy, r.pl_quality.value_or(std::nan("")), r.pl_keep_ratio,
                    r.domain_probe_accuracy);
      log << buf;
    }
    const auto& m = mean.final_row;
    std::snprintf(buf, sizeof(buf), "%6s  %8.4f  %10.4f  %10.4f  %12.4f\n", "mean",
                  m.target_accuracy, m.pl_quality.value_or(std::nan("")), m.pl_keep_ratio,
                  m.domain_probe_accuracy);
    log << buf;
  }
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kExitConfig;
    case ErrorKind::data: return kExitData;
    case ErrorKind::domain: return kExitData;
    case ErrorKind::numeric: return kExitNumeric;
    case ErrorKind::io: return kExitIo;
  }
  return kExitData;
}

}  // namespace

fs::path resolve_output_path(const fs::path& p) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root && *root && p.is_relative()) return fs::path(root) / p;
  return p;
}

void cmd_generate_data(const GenerateOptions& opt, std::ostream& log) {
  const ExperimentConfig cfg = load_experiment_config(opt.config, ConfigScope::dataset_only);
  if (!cfg.synthetic) throw ConfigError("generate-data needs a 'dataset.synthetic' section");
  const fs::path out = resolve_output_path(opt.out);
  if (fs::exists(out) && !opt.overwrite) {
    throw IoError(out.string() + " already exists (pass --overwrite to replace it)");
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const data::MultiDomainDataset ds = data::synth_generate(*cfg.synthetic);
  data::write_dataset(ds, out);
  log << "wrote " << ds.size() << " samples (" << ds.num_domains() << " domains, "
      << ds.num_classes() << " classes, " << ds.feature_dim() << " features) to " << out.string()
      << "\nfingerprint " << ds.fingerprint() << '\n';
}

fs::path cmd_train(const TrainOptions& opt, std::ostream& log) {
  ExperimentConfig cfg = load_experiment_config(opt.config, ConfigScope::training);
  cfg = with_overrides(cfg, opt.seed, opt.method, opt.out);
  if (cfg.output_dir.empty()) throw ConfigError("missing required key 'output_dir' (or pass --out)");
  const fs::path run = resolve_output_path(cfg.output_dir);

  if (non_empty_dir(run) && !opt.resume) {
    if (!opt.overwrite) {
      throw IoError(run.string() + " is not empty (pass --overwrite or --resume)");
    }
    fs::remove_all(run);
  }
  fs::create_directories(run);

  const data::MultiDomainDataset ds = load_dataset(cfg);
  const auto splits = data::leave_one_domain_out_splits(ds, cfg.n_labels, cfg.split_seed);
  const std::vector<int> targets = parse_targets(opt.target, ds.num_domains());
  const std::string benchmark = benchmark_id(ds, cfg, targets);

  write_json(run / "config.json", cfg.raw);
  nlohmann::json meta = {
      {"config", cfg.raw},
      {"resolved", {{"train", train_config_json(cfg.train)}}},
      {"method", {{"name", cfg.method}, {"settings", method_config_json(cfg.train)}}},
      {"seeds",
       {{"dataset", cfg.synthetic ? nlohmann::json(cfg.synthetic->seed) : nlohmann::json(nullptr)},
        {"split", cfg.split_seed},
        {"train", cfg.train.seed},
        {"probe", cfg.train.probe.seed}}},
      {"targets", targets},
      {"benchmark", benchmark},
      {"dataset_fingerprint", ds.fingerprint()},
      {"code_version", std::string("fixclr ") + kVersion},
      {"init_scheme", model::Model::kInitScheme},
      {"prng",
       "mt19937_64; uniform = (u64 >> 11) * 2^-53; normal = Box-Muller; sub-streams via "
       "splitmix64(seed, stream)"}};
  write_json(run / "metadata.json", meta);

  std::vector<metrics::RunMetrics> per_target;
  for (int t : targets) {
    const data::SplitSpec& split = splits[static_cast<std::size_t>(t)];
    const fs::path dir = target_dir(run, t);
    fs::create_directories(dir);
    train::FitOptions fo;
    fo.stop_after_epoch = opt.stop_after_epoch;
    if (opt.resume) fo.resume = load_state(dir, cfg.train, ds, split);
    if (!fo.resume) {
      train::TrainState fresh = train::initial_state(ds, cfg.train);
      save_state(dir, fresh, cfg.train, t);
    }
    const int start_epoch = fo.resume ? fo.resume->completed_epochs : 0;
    fo.on_epoch_end = [&, t](const train::TrainState& st) {
      save_state(dir, st, cfg.train, t);
      if (!opt.quiet) {
        const auto& r = st.metrics.epochs.back();
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "[%s target %d] epoch %3d  acc %.4f  pl_q %.4f  keep %.4f  probe %.4f  "
                      "L_S %.4f L_U %.4f L_C %.4f  %.2fs\n",
                      cfg.method.c_str(), t, r.epoch, r.target_accuracy,
                      r.pl_quality.value_or(std::nan("")), r.pl_keep_ratio,
                      r.domain_probe_accuracy, r.mean_loss_s, r.mean_loss_u, r.mean_loss_c,
                      r.epoch_seconds);
        log << buf;
      }
    };
    if (start_epoch >= cfg.train.epochs && fo.resume) {
      per_target.push_back(fo.resume->metrics);
      continue;
    }
    train::FitResult res = train::fit(ds, split, cfg.train, std::move(fo));
    per_target.push_back(std::move(res.state.metrics));
  }

  const metrics::RunSummary summary =
      metrics::summarize_run(cfg.method, benchmark, cfg.train.seed, targets, per_target);
  write_summary(run, targets, per_target, summary, log, opt.quiet);
  return run;
}

metrics::RunSummary load_run_summary(const fs::path& run_dir) {
  const nlohmann::json meta = read_json(run_dir / "metadata.json");
  const auto targets = meta.at("targets").get<std::vector<int>>();
  std::vector<metrics::RunMetrics> per_target;
  for (int t : targets) {
    metrics::RunMetrics m;
    m.epochs = metrics::read_epoch_csv(target_dir(run_dir, t) / "metrics.csv");
    if (m.epochs.empty()) {
      throw DataError(run_dir.string() + ": target " + std::to_string(t) + " has no epochs");
    }
    per_target.push_back(std::move(m));
  }
  return metrics::summarize_run(meta.at("method").at("name").get<std::string>(),
                                meta.at("benchmark").get<std::string>(),
                                meta.at("seeds").at("train").get<std::uint64_t>(), targets,
                                per_target);
}

metrics::Report cmd_report(const std::vector<fs::path>& run_dirs,
                           const std::optional<fs::path>& out_csv, std::ostream& log) {
  if (run_dirs.empty()) throw DomainError("report needs at least one run directory");
  std::vector<metrics::RunSummary> runs;
  for (const fs::path& d : run_dirs) runs.push_back(load_run_summary(d));
  metrics::Report rep = metrics::report(runs);
  if (out_csv) {
    const fs::path p = resolve_output_path(*out_csv);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    metrics::write_report_csv(p, rep);
  }
  log << metrics::format_report_table(rep);
  return rep;
}

metrics::Report cmd_sweep(const SweepOptions& opt, std::ostream& log) {
  ExperimentConfig cfg = load_experiment_config(opt.config, ConfigScope::training);
  if (!cfg.sweep) throw ConfigError("missing required key 'sweep'");
  if (opt.out) cfg = with_overrides(cfg, std::nullopt, std::nullopt, *opt.out);
  if (cfg.output_dir.empty()) throw ConfigError("missing required key 'output_dir' (or pass --out)");
  const fs::path root = resolve_output_path(cfg.output_dir);
  if (non_empty_dir(root)) {
    if (!opt.overwrite) throw IoError(root.string() + " is not empty (pass --overwrite)");
    fs::remove_all(root);
  }
  fs::create_directories(root);

  struct Job {
    std::string method;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (const std::string& m : cfg.sweep->methods) {
    for (std::uint64_t s : cfg.sweep->seeds) {
      jobs.push_back({m, s, root / m / ("seed_" + std::to_string(s))});
    }
  }

  std::mutex log_mutex;
  auto run_job = [&](const Job& job) {
    TrainOptions t;
    t.config = opt.config;
    t.target = cfg.sweep->target;
    t.seed = job.seed;
    t.method = job.method;
    t.out = job.dir.string();
    t.quiet = true;
    std::ostringstream sink;
    cmd_train(t, sink);
    std::lock_guard lock(log_mutex);
    log << "finished " << job.method << " seed " << job.seed << " -> " << job.dir.string() << '\n';
  };

  // FIXCLR_OUTPUT_ROOT was already applied to root; keep job paths as-is.
  const char* saved_root = std::getenv(kOutputRootEnv);
  const std::string saved = saved_root ? saved_root : "";
  if (saved_root) unsetenv(kOutputRootEnv);
  try {
    const int workers = std::max(1, opt.jobs);
    if (workers == 1) {
      for (const Job& j : jobs) run_job(j);
    } else {
      std::size_t next = 0;
      std::mutex queue_mutex;
      std::vector<std::future<void>> pool;
      for (int w = 0; w < workers; ++w) {
        pool.push_back(std::async(std::launch::async, [&] {
          for (;;) {
            std::size_t k;
            {
              std::lock_guard lock(queue_mutex);
              if (next >= jobs.size()) return;
              k = next++;
            }
            run_job(jobs[k]);
          }
        }));
      }
      for (auto& f : pool) f.get();
    }
  } catch (...) {
    if (saved_root) setenv(kOutputRootEnv, saved.c_str(), 1);
    throw;
  }
  if (saved_root) setenv(kOutputRootEnv, saved.c_str(), 1);

  std::vector<fs::path> dirs;
  for (const Job& j : jobs) dirs.push_back(j.dir);
  std::ostringstream table;
  metrics::Report rep = cmd_report(dirs, std::nullopt, table);
  metrics::write_report_csv(root / "report.csv", rep);
  {
    std::ofstream txt(root / "report.txt", std::ios::trunc);
    txt << table.str();
  }
  log << table.str();
  return rep;
}

metrics::EmbeddingDump cmd_export_embeddings(const ExportOptions& opt, std::ostream& log) {
  if (opt.dataset.has_value() == opt.config.has_value()) {
    throw ConfigError("export-embeddings needs exactly one of --dataset or --config");
  }
  const fs::path out = resolve_output_path(opt.out);
  if (fs::exists(out) && !opt.overwrite) {
    throw IoError(out.string() + " already exists (pass --overwrite to replace it)");
  }
  const model::Checkpoint ckpt = model::read_checkpoint(opt.checkpoint);
  const data::MultiDomainDataset ds =
      opt.dataset ? data::read_dataset(*opt.dataset)
                  : load_dataset(load_experiment_config(*opt.config, ConfigScope::dataset_only));
  if (ckpt.architecture.input_dim != ds.feature_dim() ||
      ckpt.architecture.num_classes != ds.num_classes()) {
    throw DataError("checkpoint architecture does not match the dataset");
  }
  const model::Model m(ckpt.architecture, ckpt.parameters);
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int d = ds.sample(i).domain_id;
    if (opt.domains.empty() ||
        std::find(opt.domains.begin(), opt.domains.end(), d) != opt.domains.end()) {
      indices.push_back(i);
    }
  }
  pseudo::ThresholdPolicy policy;
  policy.fixed_value = opt.threshold;
  policy.validate();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  metrics::EmbeddingDump dump = metrics::export_embeddings(m, ds, indices, out, &policy);
  log << "wrote " << dump.rows.size() << " embeddings of dimension " << dump.dim() << " to "
      << out.string() << " (checkpoint epoch " << ckpt.epoch << ")\n";
  return dump;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FixCLR semi-supervised domain generalization lab"};
  app.set_version_flag("--version", std::string("fixclr ") + kVersion);
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate-data", "Generate a synthetic multi-domain dataset");
  generate->add_option("-c,--config", gen.config, "Experiment config (JSON)")->required();
  generate->add_option("-o,--out", gen.out, "Dataset file to write")->required();
  generate->add_flag("--overwrite", gen.overwrite, "Replace an existing file");

  TrainOptions tr;
  std::uint64_t seed_value = 0;
  std::string method_value, out_value;
  auto* train_cmd = app.add_subcommand("train", "Train on leave-one-domain-out splits");
  train_cmd->add_option("-c,--config", tr.config, "Experiment config (JSON)")->required();
  train_cmd->add_option("--target", tr.target, "Target domain index or 'all'");
  auto* seed_opt = train_cmd->add_option("--seed", seed_value, "Override train.seed");
  auto* method_opt = train_cmd->add_option("--method", method_value,
                                           "Override method.regularizer");
  auto* out_opt = train_cmd->add_option("-o,--out", out_value, "Override output_dir");
  train_cmd->add_flag("--overwrite", tr.overwrite, "Replace an existing run directory");
  train_cmd->add_flag("--resume", tr.resume, "Continue from the last checkpoints");
  train_cmd->add_option("--stop-after", tr.stop_after_epoch,
                        "Stop after this epoch; continue later with --resume")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_flag("-q,--quiet", tr.quiet, "Only print the run directory");

  SweepOptions sw;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Run every method x seed in the config's sweep section");
  sweep->add_option("-c,--config", sw.config, "Experiment config (JSON)")->required();
  auto* sweep_out_opt = sweep->add_option("-o,--out", sweep_out, "Override output_dir");
  sweep->add_flag("--overwrite", sw.overwrite, "Replace an existing sweep directory");
  sweep->add_option("-j,--jobs", sw.jobs, "Runs executed concurrently")->check(CLI::PositiveNumber);

  ExportOptions ex;
  std::string ex_dataset, ex_config;
  auto* export_cmd = app.add_subcommand("export-embeddings", "Write projected embeddings as CSV");
  export_cmd->add_option("--checkpoint", ex.checkpoint, "model.ckpt to load")->required();
  auto* ex_dataset_opt = export_cmd->add_option("--dataset", ex_dataset, "Dataset file");
  auto* ex_config_opt = export_cmd->add_option("-c,--config", ex_config,
                                               "Experiment config to regenerate the dataset");
  export_cmd->add_option("-o,--out", ex.out, "Embedding CSV to write")->required();
  export_cmd->add_option("--domain", ex.domains, "Restrict to these domains (repeatable)");
  export_cmd->add_option("--threshold", ex.threshold, "Confidence for the pseudo_label column");
  export_cmd->add_flag("--overwrite", ex.overwrite, "Replace an existing file");

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Compare finished runs");
  report_cmd->add_option("runs", report_dirs, "Run directories");
  auto* report_out_opt = report_cmd->add_option("-o,--out", report_out, "Report CSV to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*generate) {
      cmd_generate_data(gen, out);
    } else if (*train_cmd) {
      if (*seed_opt) tr.seed = seed_value;
      if (*method_opt) tr.method = method_value;
      if (*out_opt) tr.out = out_value;
      const fs::path run = cmd_train(tr, out);
      out << "run directory " << run.string() << '\n';
    } else if (*sweep) {
      if (*sweep_out_opt) sw.out = sweep_out;
      cmd_sweep(sw, out);
    } else if (*export_cmd) {
      if (*ex_dataset_opt) ex.dataset = ex_dataset;
      if (*ex_config_opt) ex.config = ex_config;
      cmd_export_embeddings(ex, out);
    } else if (*report_cmd) {
      if (report_dirs.empty()) {
        err << "report: at least one run directory is required\n" << report_cmd->help();
        return kExitUsage;
      }
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      std::optional<fs::path> csv;
      if (*report_out_opt) csv = report_out;
      cmd_report(dirs, csv, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace fixclr::cli
