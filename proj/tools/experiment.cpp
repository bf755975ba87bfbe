#include "experiment.hpp"

#include <fstream>
#include <set>

#include "fixclr/error.hpp"
#include "fixclr/model.hpp"

namespace fixclr::cli {

namespace {

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T required(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError("missing required key '" + full(key) + "'");
    return get<T>(key);
  }

  template <typename T>
  T optional(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    return get<T>(key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), full(key));
  }

  std::string full(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + full(key) + "'");
    }
  }

 private:
  template <typename T>
  T get(const std::string& key) {
    seen_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("key '" + full(key) + "' has the wrong type");
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

data::SyntheticConfig parse_synthetic(Section s) {
  data::SyntheticConfig c;
  c.num_domains = s.required<int>("num_domains");
  c.num_classes = s.required<int>("num_classes");
  c.feature_dim = s.required<int>("feature_dim");
  c.samples_per_domain_class = s.required<int>("samples_per_domain_class");
  c.seed = s.required<std::uint64_t>("seed");
  c.class_separation = s.optional<double>("class_separation", c.class_separation);
  c.noise_std = s.optional<double>("noise_std", c.noise_std);
  if (s.has("rotation_axes")) {
    const auto axes = s.required<std::vector<int>>("rotation_axes");
    if (axes.size() != 2) throw ConfigError("'dataset.synthetic.rotation_axes' needs two entries");
    c.rotation_axis_a = axes[0];
    c.rotation_axis_b = axes[1];
  }
  if (s.has("domain_transforms") && s.has("domains")) {
    throw ConfigError("give either dataset.synthetic.domain_transforms or .domains, not both");
  }
  if (s.has("domain_transforms")) {
    const auto list = s.required<nlohmann::json>("domain_transforms");
    for (std::size_t k = 0; k < list.size(); ++k) {
      Section t(list[k], s.full("domain_transforms") + "[" + std::to_string(k) + "]");
      data::DomainTransform dt;
      dt.rotation = t.optional<double>("rotation", 0.0);
      dt.offset = t.optional<std::vector<double>>("offset", {});
      dt.scale = t.optional<double>("scale", 1.0);
      t.finish();
      c.domain_transforms.push_back(std::move(dt));
    }
  } else if (s.has("domains")) {
    Section d = s.child("domains");
    const double rotation_step = d.optional<double>("rotation_step", 0.0);
    const double offset_norm = d.optional<double>("offset_norm", 0.0);
    const double scale_step = d.optional<double>("scale_step", 0.0);
    d.finish();
    c.domain_transforms = data::make_domain_transforms(c.num_domains, c.feature_dim,
                                                       rotation_step, offset_norm, scale_step,
                                                       c.seed);
  }
  s.finish();
  c.validate();
  return c;
}

void parse_train(Section s, train::TrainConfig& t) {
  t.seed = s.required<std::uint64_t>("seed");
  t.epochs = s.optional<int>("epochs", t.epochs);
  t.steps_per_epoch = s.optional<int>("steps_per_epoch", t.steps_per_epoch);
  t.base_lr = s.optional<double>("base_lr", t.base_lr);
  t.momentum = s.optional<double>("momentum", t.momentum);
  t.weight_decay = s.optional<double>("weight_decay", t.weight_decay);
  t.batch_size = s.optional<int>("batch_size", t.batch_size);
  t.mu = s.optional<int>("mu", t.mu);
  t.probe_every = s.optional<int>("probe_every", t.probe_every);
  t.ema = s.optional<bool>("ema", t.ema);
  if (s.has("model")) {
    Section m = s.child("model");
    t.architecture.hidden_dim = m.optional<int>("hidden_dim", t.architecture.hidden_dim);
    t.architecture.representation_dim =
        m.optional<int>("representation_dim", t.architecture.representation_dim);
    t.architecture.projection_hidden_dim =
        m.optional<int>("projection_hidden_dim", t.architecture.projection_hidden_dim);
    t.architecture.projection_dim =
        m.optional<int>("projection_dim", t.architecture.projection_dim);
    m.finish();
  }
  if (s.has("augment")) {
    Section a = s.child("augment");
    t.augmentation.weak.noise_std = a.optional<double>("weak_noise_std", t.augmentation.weak.noise_std);
    t.augmentation.strong.noise_std =
        a.optional<double>("strong_noise_std", t.augmentation.strong.noise_std);
    t.augmentation.strong.mask_fraction =
        a.optional<double>("strong_mask_fraction", t.augmentation.strong.mask_fraction);
    a.finish();
  }
  if (s.has("probe")) {
    Section p = s.child("probe");
    t.probe.kind = metrics::probe_kind_from_string(
        p.optional<std::string>("kind", metrics::to_string(t.probe.kind)));
    t.probe.folds = p.optional<int>("folds", t.probe.folds);
    t.probe.seed = p.optional<std::uint64_t>("seed", t.probe.seed);
    t.probe.l2 = p.optional<double>("l2", t.probe.l2);
    t.probe.max_iterations = p.optional<int>("max_iterations", t.probe.max_iterations);
    t.probe.tolerance = p.optional<double>("tolerance", t.probe.tolerance);
    p.finish();
  }
  s.finish();
}

void parse_method(Section s, ExperimentConfig& cfg) {
  cfg.method = s.required<std::string>("regularizer");
  cfg.train.regularizer = train::regularizer_from_string(cfg.method);
  if (s.has("fixclr")) {
    Section f = s.child("fixclr");
    auto& lc = cfg.train.fixclr;
    lc.temperature = f.optional<double>("temperature", lc.temperature);
    lc.loss_weight = f.optional<double>("loss_weight", lc.loss_weight);
    lc.similarity = loss::similarity_from_string(
        f.optional<std::string>("similarity", loss::to_string(lc.similarity)));
    cfg.train.features = train::feature_source_from_string(
        f.optional<std::string>("features", train::to_string(cfg.train.features)));
    f.finish();
  }
  if (s.has("threshold")) {
    Section t = s.child("threshold");
    auto& th = cfg.train.threshold;
    const auto kind = t.optional<std::string>("kind", "fixed");
    if (kind == "fixed") {
      th.kind = pseudo::ThresholdKind::fixed;
      th.fixed_value = t.optional<double>("value", th.fixed_value);
    } else if (kind == "plugin") {
      th.kind = pseudo::ThresholdKind::plugin;
      th.plugin_id = t.required<std::string>("id");
      th.history_length = t.optional<int>("history_length", 0);
      th.plugin = pseudo::PluginRegistry::instance().create(th.plugin_id);
    } else {
      throw ConfigError("unknown threshold kind '" + kind + "'");
    }
    t.finish();
  }
  s.finish();
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j, ConfigScope scope,
                                         const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.base_dir = base_dir;
  Section root(j, "");
  if (!root.has("dataset")) throw ConfigError("missing required key 'dataset'");
  {
    Section ds = root.child("dataset");
    if (ds.has("synthetic") == ds.has("path")) {
      throw ConfigError("'dataset' needs exactly one of 'synthetic' or 'path'");
    }
    if (ds.has("synthetic")) {
      cfg.synthetic = parse_synthetic(ds.child("synthetic"));
    } else {
      cfg.dataset_path = ds.required<std::string>("path");
    }
    ds.finish();
  }
  const bool training = scope == ConfigScope::training;
  if (root.has("split")) {
    Section sp = root.child("split");
    cfg.n_labels = sp.required<int>("n_labels");
    cfg.split_seed = sp.required<std::uint64_t>("seed");
    sp.finish();
  } else if (training) {
    throw ConfigError("missing required key 'split'");
  }
  if (root.has("train")) {
    parse_train(root.child("train"), cfg.train);
  } else if (training) {
    throw ConfigError("missing required key 'train'");
  }
  if (root.has("method")) {
    parse_method(root.child("method"), cfg);
  } else if (training) {
    throw ConfigError("missing required key 'method'");
  }
  cfg.output_dir = root.optional<std::string>("output_dir", "");
  if (root.has("sweep")) {
    Section sw = root.child("sweep");
    SweepSection s;
    s.methods = sw.required<std::vector<std::string>>("methods");
    s.seeds = sw.required<std::vector<std::uint64_t>>("seeds");
    s.target = sw.optional<std::string>("target", "all");
    for (const auto& m : s.methods) train::regularizer_from_string(m);
    sw.finish();
    cfg.sweep = std::move(s);
  }
  root.finish();
  if (training) cfg.train.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, ConfigScope scope) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j, scope, path.parent_path());
}

ExperimentConfig with_overrides(const ExperimentConfig& cfg, std::optional<std::uint64_t> seed,
                                std::optional<std::string> method,
                                std::optional<std::string> output_dir) {
  nlohmann::json j = cfg.raw;
  if (seed) j["train"]["seed"] = *seed;
  if (method) j["method"]["regularizer"] = *method;
  if (output_dir) j["output_dir"] = *output_dir;
  return parse_experiment_config(j, ConfigScope::training, cfg.base_dir);
}

data::MultiDomainDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.synthetic) return data::synth_generate(*cfg.synthetic);
  std::filesystem::path p = *cfg.dataset_path;
  if (p.is_relative() && !cfg.base_dir.empty()) p = cfg.base_dir / p;
  return data::read_dataset(p);
}

std::string benchmark_id(const data::MultiDomainDataset& ds, const ExperimentConfig& cfg,
                         const std::vector<int>& targets) {
  std::string id = ds.fingerprint() + "/labels" + std::to_string(cfg.n_labels) + "/split" +
                   std::to_string(cfg.split_seed) + "/targets";
  for (std::size_t k = 0; k < targets.size(); ++k) {
    id += (k ? "-" : "") + std::to_string(targets[k]);
  }
  return id;
}

nlohmann::json train_config_json(const train::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"steps_per_epoch", t.steps_per_epoch},
          {"base_lr", t.base_lr},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"mu", t.mu},
          {"seed", t.seed},
          {"augment",
           {{"weak_noise_std", t.augmentation.weak.noise_std},
            {"strong_noise_std", t.augmentation.strong.noise_std},
            {"strong_mask_fraction", t.augmentation.strong.mask_fraction}}},
          {"model", model::to_json(t.architecture)},
          {"probe",
           {{"kind", metrics::to_string(t.probe.kind)},
            {"folds", t.probe.folds},
            {"seed", t.probe.seed},
            {"l2", t.probe.l2},
            {"max_iterations", t.probe.max_iterations},
            {"tolerance", t.probe.tolerance}}},
          {"probe_every", t.probe_every},
          {"ema", t.ema}};
}

nlohmann::json method_config_json(const train::TrainConfig& t) {
  return {{"regularizer", train::to_string(t.regularizer)},
          {"fixclr",
           {{"temperature", t.fixclr.temperature},
            {"loss_weight", t.fixclr.loss_weight},
            {"similarity", loss::to_string(t.fixclr.similarity)},
            {"features", train::to_string(t.features)}}},
          {"threshold",
           t.threshold.kind == pseudo::ThresholdKind::fixed
               ? nlohmann::json{{"kind", "fixed"}, {"value", t.threshold.fixed_value}}
               : nlohmann::json{{"kind", "plugin"},
                                {"id", t.threshold.plugin_id},
                                {"history_length", t.threshold.history_length}}}};
}

}  // namespace fixclr::cli
