#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace fixclr::model {

using Matrix = Eigen::MatrixXd;  // rows are samples
using Vector = Eigen::VectorXd;

/// Encoder: input -> hidden (tanh) -> representation (tanh).
/// Projection head: representation -> projection_hidden (tanh) -> projection,
/// then L2-normalized. Classifier: linear on the representation.
struct Architecture {
  int input_dim = 16;
  int hidden_dim = 64;
  int representation_dim = 64;
  int projection_hidden_dim = 64;
  int projection_dim = 32;
  int num_classes = 5;

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

// One dense layer inside the flat parameter vector. Weights are stored
// row-major with shape (out, in), followed by `out` biases.
struct ParameterBlock {
  std::string name;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  int out = 0;
  int in = 0;
};

// Per-sample view, copied out of a ForwardBatch.
struct ForwardResult {
  Vector representation;
  Vector projected;
  Vector logits;
};

// Activations kept for the backward pass.
struct ForwardBatch {
  Matrix input;
  Matrix hidden;
  Matrix representation;
  Matrix projection_hidden;
  Matrix projection_raw;
  Vector projection_norm;
  Matrix projected;  // unit rows
  Matrix logits;

  Eigen::Index size() const { return input.rows(); }
  ForwardResult result(Eigen::Index i) const;
};

class Model {
 public:
  static constexpr const char* kInitScheme =
      "xavier_uniform weights U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))), zero "
      "biases; stream derive_seed(seed, 0x696e6974)";

  Model() = default;
  Model(const Architecture& arch, std::uint64_t init_seed);
  Model(const Architecture& arch, Vector parameters);

  const Architecture& architecture() const { return arch_; }
  const std::vector<ParameterBlock>& layout() const { return layout_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }

  // Throws DomainError when inputs.cols() != input_dim.
  ForwardBatch forward(const Matrix& inputs) const;

  // Parameter gradient of a scalar whose partials with respect to the
  // forward outputs are given. Any of the three may be null.
  Vector backward(const ForwardBatch& fwd, const Matrix* dlogits, const Matrix* dprojected,
                  const Matrix* drepresentation) const;

 private:
  void build_layout();

  Architecture arch_;
  std::vector<ParameterBlock> layout_;
  Vector params_;
};

// FNV-1a over the raw parameter bytes; equal checksums mean bitwise-equal
// parameters in practice.
std::string parameter_checksum(const Vector& params);

// Row-wise L2 normalization and its vector-Jacobian product.
Matrix normalize_rows(const Matrix& raw, Vector* norms = nullptr);
Matrix normalize_rows_backward(const Matrix& normalized, const Vector& norms,
                               const Matrix& dnormalized);

/// Checkpoint file:
///   line 1: "# fixclr-checkpoint v1"
///   line 2: "# " + compact JSON {architecture, seed, epoch, init_scheme,
///           parameter_count, layout, extra}
///   then parameter_count IEEE-754 binary64 values, little-endian, in
///   layout order.
struct Checkpoint {
  Architecture architecture;
  std::uint64_t seed = 0;
  int epoch = 0;
  Vector parameters;
  nlohmann::json extra = nlohmann::json::object();
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace fixclr::model
