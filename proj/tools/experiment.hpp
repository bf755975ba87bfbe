#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixclr/data.hpp"
#include "fixclr/trainer.hpp"

namespace fixclr::cli {

/// Experiment config file (JSON). Sections and keys:
///
///   dataset.synthetic   num_domains*, num_classes*, feature_dim*,
///                       samples_per_domain_class*, seed*, class_separation,
///                       noise_std, rotation_axes [a, b], and either
///                       domain_transforms [{rotation, offset, scale}] or
///                       domains {rotation_step, offset_norm, scale_step}
///   dataset.path        dataset file (relative to the config file)
///   split               n_labels*, seed*
///   train               seed*, epochs, steps_per_epoch, base_lr, momentum,
///                       weight_decay, batch_size, mu, probe_every, ema,
///                       model {hidden_dim, representation_dim,
///                              projection_hidden_dim, projection_dim},
///                       augment {weak_noise_std, strong_noise_std,
///                                strong_mask_fraction},
///                       probe {kind, folds, seed, l2, max_iterations, tolerance}
///   method              regularizer* (none | fixclr | fixclr_with_positives),
///                       fixclr {temperature, loss_weight, similarity, features},
///                       threshold {kind: fixed | plugin, value, id, history_length}
///   output_dir          run directory
///   sweep               methods [..], seeds [..], target ("all" or index)
///
/// Keys marked * are required; unknown keys are rejected.
struct SweepSection {
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  std::string target = "all";
};

struct ExperimentConfig {
  nlohmann::json raw;  // as parsed, after overrides
  std::filesystem::path base_dir;

  std::optional<data::SyntheticConfig> synthetic;
  std::optional<std::filesystem::path> dataset_path;

  int n_labels = 10;
  std::uint64_t split_seed = 0;
  train::TrainConfig train;
  std::string method = "fixclr";
  std::string output_dir;
  std::optional<SweepSection> sweep;
};

enum class ConfigScope { dataset_only, training };

ExperimentConfig parse_experiment_config(const nlohmann::json& j, ConfigScope scope,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path, ConfigScope scope);

// Rewrites raw JSON fields for command-line overrides, then reparses.
ExperimentConfig with_overrides(const ExperimentConfig& cfg, std::optional<std::uint64_t> seed,
                                std::optional<std::string> method,
                                std::optional<std::string> output_dir);

data::MultiDomainDataset load_dataset(const ExperimentConfig& cfg);

// Identifies runs that may be compared in one report.
std::string benchmark_id(const data::MultiDomainDataset& ds, const ExperimentConfig& cfg,
                         const std::vector<int>& targets);

// Resolved settings split the same way as the config file: training
// protocol vs. method (regularizer, FixCLR settings, threshold policy).
nlohmann::json train_config_json(const train::TrainConfig& cfg);
nlohmann::json method_config_json(const train::TrainConfig& cfg);

}  // namespace fixclr::cli
