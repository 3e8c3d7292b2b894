#include "protoalign/projection_head.hpp"

#include <bit>
#include <fstream>

#include "protoalign/error.hpp"
#include "protoalign/random.hpp"

namespace protoalign {

namespace {

constexpr char kMagic[4] = {'P', 'H', 'D', '1'};

void require_finite(const Matrix& w, const char* context) {
  if (!w.allFinite()) throw Error(ErrorCode::non_finite, std::string(context) + ": non-finite weight");
}

}  // namespace

ProjectionHead::ProjectionHead(Matrix weights, io::Metadata metadata)
    : weights_(std::move(weights)), metadata_(std::move(metadata)) {
  if (weights_.rows() < 1 || weights_.cols() < 1) {
    throw Error(ErrorCode::invalid_argument, "projection head needs positive dims");
  }
  require_finite(weights_, "projection head");
}

ProjectionHead ProjectionHead::identity(std::uint32_t dim) {
  return ProjectionHead(Matrix::Identity(dim, dim));
}

void ProjectionHead::step(const Matrix& gradient, double rate) {
  if (gradient.rows() != weights_.rows() || gradient.cols() != weights_.cols()) {
    throw Error(ErrorCode::dim_mismatch, "gradient shape does not match head");
  }
  weights_.noalias() -= rate * gradient;
  if (!weights_.allFinite()) {
    throw Error(ErrorCode::numeric_failure, "weights became non-finite after update");
  }
}

bool ProjectionHead::same_weights(const ProjectionHead& other) const {
  if (weights_.rows() != other.weights_.rows() || weights_.cols() != other.weights_.cols()) return false;
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(weights_.data()[i]) !=
        std::bit_cast<std::uint64_t>(other.weights_.data()[i])) {
      return false;
    }
  }
  return true;
}

ProjectionHead init_head(std::int64_t in_dim, std::int64_t out_dim, const HeadInit& init) {
  if (in_dim < 1 || out_dim < 1) {
    throw Error(ErrorCode::invalid_argument, "head dims must be positive, got " +
                                                 std::to_string(in_dim) + "x" + std::to_string(out_dim));
  }
  Rng rng(init.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  Matrix w(in_dim, out_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
  return ProjectionHead(std::move(w));
}

Vector project(const ProjectionHead& head, const Vector& v) {
  if (v.size() != head.in_dim()) {
    throw Error(ErrorCode::dim_mismatch, "input length " + std::to_string(v.size()) +
                                             " does not match head in_dim " + std::to_string(head.in_dim()));
  }
  return head.weights().transpose() * v;
}

Vector project(const ProjectionHead& head, std::span<const float> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(i)] = v[i];
  return project(head, x);
}

Matrix project_rows(const ProjectionHead& head, const Matrix& rows) {
  if (rows.cols() != head.in_dim()) {
    throw Error(ErrorCode::dim_mismatch, "batch width " + std::to_string(rows.cols()) +
                                             " does not match head in_dim " + std::to_string(head.in_dim()));
  }
  return rows * head.weights();
}

std::uint64_t save_head(const ProjectionHead& head, std::ostream& sink) {
  io::ByteWriter w(sink);
  w.put_bytes(std::string(kMagic, 4));
  w.put_uint(kHeadFormatVersion);
  w.put_uint(head.in_dim());
  w.put_uint(head.out_dim());
  io::write_metadata(w, head.metadata());
  const Matrix& m = head.weights();
  for (Eigen::Index i = 0; i < m.size(); ++i) w.put_f64(m.data()[i]);
  return w.count();
}

void save_head_file(const ProjectionHead& head, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "' for writing");
  save_head(head, out);
  out.flush();
  if (!out) throw Error(ErrorCode::io_error, "write to '" + path.string() + "' failed");
}

ProjectionHead load_head(std::istream& source, ExpectedDims expected) {
  io::ByteReader r(source);
  if (r.get_bytes(4, "magic") != std::string(kMagic, 4)) {
    throw Error(ErrorCode::bad_magic, "not a PHD1 file (bad magic)");
  }
  const auto version = r.get_uint<std::uint16_t>("format version");
  if (version != kHeadFormatVersion) {
    throw Error(ErrorCode::version_mismatch, "unsupported PHD1 version " + std::to_string(version));
  }
  const auto in_dim = r.get_uint<std::uint32_t>("in_dim");
  const auto out_dim = r.get_uint<std::uint32_t>("out_dim");
  if (in_dim == 0 || out_dim == 0) throw Error(ErrorCode::malformed, "head dims must be positive");
  if ((expected.in_dim && expected.in_dim != in_dim) || (expected.out_dim && expected.out_dim != out_dim)) {
    throw Error(ErrorCode::dim_mismatch,
                "head is " + std::to_string(in_dim) + "x" + std::to_string(out_dim) + ", expected " +
                    (expected.in_dim ? std::to_string(expected.in_dim) : std::string("*")) + "x" +
                    (expected.out_dim ? std::to_string(expected.out_dim) : std::string("*")));
  }
  auto metadata = io::read_metadata(r);
  Matrix w(in_dim, out_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = r.get_f64("weight");
  if (source.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::malformed, "trailing bytes after weights");
  }
  return ProjectionHead(std::move(w), std::move(metadata));
}

ProjectionHead load_head_file(const std::filesystem::path& path, ExpectedDims expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  return load_head(in, expected);
}

}  // namespace protoalign
