#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>

#include "protoalign/binary_io.hpp"

namespace protoalign {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr std::uint16_t kHeadFormatVersion = 1;

/// A zero head would leave every cosine undefined, so only a random
/// initialization is offered.
enum class InitKind { gaussian_scaled };

struct HeadInit {
  InitKind kind = InitKind::gaussian_scaled;
  std::uint64_t seed = 0;
};

/// The learnable linear map from an L-wide embedding space into an L'-wide
/// one. Row i of the weight matrix is the image of input basis vector i, so
/// project(v) = v^T W.
class ProjectionHead {
 public:
  /// Takes ownership of an L x L' weight matrix; entries must be finite.
  explicit ProjectionHead(Matrix weights, io::Metadata metadata = {});

  static ProjectionHead identity(std::uint32_t dim);

  std::uint32_t in_dim() const { return static_cast<std::uint32_t>(weights_.rows()); }
  std::uint32_t out_dim() const { return static_cast<std::uint32_t>(weights_.cols()); }
  const Matrix& weights() const { return weights_; }

  const io::Metadata& metadata() const { return metadata_; }
  io::Metadata& metadata() { return metadata_; }

  /// Plain gradient step: W <- W - rate * gradient.
  void step(const Matrix& gradient, double rate);

  /// Bitwise comparison of dims and weights (metadata ignored).
  bool same_weights(const ProjectionHead& other) const;

 private:
  Matrix weights_;
  io::Metadata metadata_;
};

/// Entries i.i.d. Normal(0, 1/L), deterministic in the seed.
ProjectionHead init_head(std::int64_t in_dim, std::int64_t out_dim, const HeadInit& init);

Vector project(const ProjectionHead& head, const Vector& v);
Vector project(const ProjectionHead& head, std::span<const float> v);

/// Row-wise projection of a batch: (N x L) -> (N x L').
Matrix project_rows(const ProjectionHead& head, const Matrix& rows);

std::uint64_t save_head(const ProjectionHead& head, std::ostream& sink);
void save_head_file(const ProjectionHead& head, const std::filesystem::path& path);

struct ExpectedDims {
  std::uint32_t in_dim = 0;  // 0 = no expectation
  std::uint32_t out_dim = 0;
};

ProjectionHead load_head(std::istream& source, ExpectedDims expected = {});
ProjectionHead load_head_file(const std::filesystem::path& path, ExpectedDims expected = {});

}  // namespace protoalign
