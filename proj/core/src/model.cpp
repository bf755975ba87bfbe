#include "fixclr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fixclr/error.hpp"
#include "fixclr/rng.hpp"

namespace fixclr::model {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajor>;
using Weights = Eigen::Map<RowMajor>;

constexpr const char* kCheckpointMagic = "# fixclr-checkpoint v1";

ConstWeights weights(const Vector& p, const ParameterBlock& b) {
  return ConstWeights(p.data() + b.weight_offset, b.out, b.in);
}
Eigen::Map<const Vector> bias(const Vector& p, const ParameterBlock& b) {
  return Eigen::Map<const Vector>(p.data() + b.bias_offset, b.out);
}

Matrix dense(const Matrix& x, const Vector& p, const ParameterBlock& b) {
  Matrix y = x * weights(p, b).transpose();
  y.rowwise() += bias(p, b).transpose();
  return y;
}

// Accumulates dW, db into grad and returns dX.
Matrix dense_backward(const Matrix& x, const Matrix& dy, const Vector& p,
                      const ParameterBlock& b, Vector& grad) {
  Weights(grad.data() + b.weight_offset, b.out, b.in) += dy.transpose() * x;
  Eigen::Map<Vector>(grad.data() + b.bias_offset, b.out) += dy.colwise().sum().transpose();
  return dy * weights(p, b);
}

Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
  return dy.array() * (1.0 - y.array().square());
}

enum Block { kEnc1 = 0, kEnc2, kProj1, kProj2, kCls };

}  // namespace

void Architecture::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || representation_dim < 1 || projection_hidden_dim < 1 ||
      projection_dim < 1 || num_classes < 2) {
    throw ConfigError("model: all widths must be positive and num_classes >= 2");
  }
}

nlohmann::json to_json(const Architecture& a) {
  return {{"input_dim", a.input_dim},
          {"hidden_dim", a.hidden_dim},
          {"representation_dim", a.representation_dim},
          {"projection_hidden_dim", a.projection_hidden_dim},
          {"projection_dim", a.projection_dim},
          {"num_classes", a.num_classes},
          {"activation", "tanh"}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.input_dim = j.at("input_dim").get<int>();
  a.hidden_dim = j.at("hidden_dim").get<int>();
  a.representation_dim = j.at("representation_dim").get<int>();
  a.projection_hidden_dim = j.at("projection_hidden_dim").get<int>();
  a.projection_dim = j.at("projection_dim").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  return a;
}

ForwardResult ForwardBatch::result(Eigen::Index i) const {
  return {representation.row(i).transpose(), projected.row(i).transpose(),
          logits.row(i).transpose()};
}

void Model::build_layout() {
  arch_.validate();
  const std::pair<const char*, std::pair<int, int>> shapes[] = {
      {"encoder.0", {arch_.hidden_dim, arch_.input_dim}},
      {"encoder.1", {arch_.representation_dim, arch_.hidden_dim}},
      {"projection.0", {arch_.projection_hidden_dim, arch_.representation_dim}},
      {"projection.1", {arch_.projection_dim, arch_.projection_hidden_dim}},
      {"classifier", {arch_.num_classes, arch_.representation_dim}},
  };
  layout_.clear();
  std::size_t offset = 0;
  for (const auto& [name, shape] : shapes) {
    ParameterBlock b;
    b.name = name;
    b.out = shape.first;
    b.in = shape.second;
    b.weight_offset = offset;
    offset += static_cast<std::size_t>(b.out) * b.in;
    b.bias_offset = offset;
    offset += static_cast<std::size_t>(b.out);
    layout_.push_back(b);
  }
  params_.setZero(static_cast<Eigen::Index>(offset));
}

Model::Model(const Architecture& arch, std::uint64_t init_seed) : arch_(arch) {
  build_layout();
  Rng rng(derive_seed(init_seed, 0x696e6974ULL));
  for (const ParameterBlock& b : layout_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(b.in + b.out));
    const std::size_t n = static_cast<std::size_t>(b.out) * b.in;
    for (std::size_t k = 0; k < n; ++k) {
      params_[static_cast<Eigen::Index>(b.weight_offset + k)] = limit * (2.0 * rng.uniform() - 1.0);
    }
  }
}

Model::Model(const Architecture& arch, Vector parameters) : arch_(arch) {
  build_layout();
  if (parameters.size() != params_.size()) {
    throw DataError("model: expected " + std::to_string(params_.size()) + " parameters, got " +
                    std::to_string(parameters.size()));
  }
  params_ = std::move(parameters);
}

ForwardBatch Model::forward(const Matrix& inputs) const {
  if (inputs.cols() != arch_.input_dim) {
    throw DomainError("model: input has " + std::to_string(inputs.cols()) +
                      " features, expected " + std::to_string(arch_.input_dim));
  }
  ForwardBatch f;
  f.input = inputs;
  f.hidden = dense(inputs, params_, layout_[kEnc1]).array().tanh();
  f.representation = dense(f.hidden, params_, layout_[kEnc2]).array().tanh();
  f.projection_hidden = dense(f.representation, params_, layout_[kProj1]).array().tanh();
  f.projection_raw = dense(f.projection_hidden, params_, layout_[kProj2]);
  f.projected = normalize_rows(f.projection_raw, &f.projection_norm);
  f.logits = dense(f.representation, params_, layout_[kCls]);
  return f;
}

Vector Model::backward(const ForwardBatch& f, const Matrix* dlogits, const Matrix* dprojected,
                       const Matrix* drepresentation) const {
  Vector grad = Vector::Zero(params_.size());
  Matrix drep = Matrix::Zero(f.representation.rows(), f.representation.cols());
  if (drepresentation) drep += *drepresentation;
  if (dlogits) drep += dense_backward(f.representation, *dlogits, params_, layout_[kCls], grad);
  if (dprojected) {
    const Matrix draw = normalize_rows_backward(f.projected, f.projection_norm, *dprojected);
    const Matrix dph =
        dense_backward(f.projection_hidden, draw, params_, layout_[kProj2], grad);
    drep += dense_backward(f.representation, tanh_backward(f.projection_hidden, dph), params_,
                           layout_[kProj1], grad);
  }
  const Matrix dhidden = dense_backward(f.hidden, tanh_backward(f.representation, drep), params_,
                                        layout_[kEnc2], grad);
  dense_backward(f.input, tanh_backward(f.hidden, dhidden), params_, layout_[kEnc1], grad);
  return grad;
}

Matrix normalize_rows(const Matrix& raw, Vector* norms) {
  Vector n = raw.rowwise().norm();
  Matrix out = raw;
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    out.row(i) /= std::max(n[i], 1e-12);
  }
  if (norms) *norms = std::move(n);
  return out;
}

Matrix normalize_rows_backward(const Matrix& normalized, const Vector& norms,
                               const Matrix& dnormalized) {
  Matrix out(normalized.rows(), normalized.cols());
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    const double along = normalized.row(i).dot(dnormalized.row(i));
    out.row(i) = (dnormalized.row(i) - along * normalized.row(i)) / std::max(norms[i], 1e-12);
  }
  return out;
}

std::string parameter_checksum(const Vector& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(params.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  Model shape(ckpt.architecture, ckpt.parameters);
  nlohmann::json layout = nlohmann::json::array();
  for (const ParameterBlock& b : shape.layout()) {
    layout.push_back({{"name", b.name}, {"out", b.out}, {"in", b.in}});
  }
  nlohmann::json header = {{"architecture", to_json(ckpt.architecture)},
                           {"seed", ckpt.seed},
                           {"epoch", ckpt.epoch},
                           {"init_scheme", Model::kInitScheme},
                           {"parameter_count", ckpt.parameters.size()},
                           {"layout", layout},
                           {"extra", ckpt.extra}};
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << kCheckpointMagic << '\n' << "# " << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(ckpt.parameters.data()),
              static_cast<std::streamsize>(ckpt.parameters.size() * sizeof(double)));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw DataError(path.string() + ": not a fixclr checkpoint");
  }
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw DataError(path.string() + ": missing checkpoint header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line.substr(2));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  Checkpoint ckpt;
  ckpt.architecture = architecture_from_json(header.at("architecture"));
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.extra = header.value("extra", nlohmann::json::object());
  const auto count = header.at("parameter_count").get<Eigen::Index>();
  ckpt.parameters.resize(count);
  in.read(reinterpret_cast<char*>(ckpt.parameters.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw DataError(path.string() + ": truncated parameter array");
  }
  Model check(ckpt.architecture, ckpt.parameters);  // validates the count
  return ckpt;
}

}  // namespace fixclr::model
