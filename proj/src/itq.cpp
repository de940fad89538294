#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "anyshot/errors.hpp"
#include "anyshot/itq.hpp"

namespace anyshot {
namespace {

Eigen::MatrixXd signs(const Eigen::MatrixXd& v) {
  return v.unaryExpr([](double x) { return x >= 0.0 ? 1.0 : -1.0; });
}

// argmin_R ||B - V R||_F over orthogonal R.
Eigen::MatrixXd procrustes(const Eigen::MatrixXd& v, const Eigen::MatrixXd& b) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(v.transpose() * b, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

void ItqCodec::store(TensorArchive& archive) const {
  archive.put_vector("itq.mean", mean.transpose());
  archive.put_matrix("itq.projection", projection);
  archive.put_matrix("itq.rotation", rotation);
}

ItqCodec ItqCodec::restore(const TensorArchive& archive) {
  ItqCodec c;
  c.mean = archive.vector("itq.mean").transpose();
  c.projection = archive.matrix("itq.projection");
  c.rotation = archive.matrix("itq.rotation");
  if (c.projection.rows() != c.mean.size() || c.rotation.rows() != c.rotation.cols() ||
      c.projection.cols() != c.rotation.rows()) {
    throw ShapeError("inconsistent ITQ codec tensors");
  }
  return c;
}

void ItqCodec::save(const std::filesystem::path& path) const {
  TensorArchive archive;
  store(archive);
  write_checkpoint(archive, path);
}

ItqCodec ItqCodec::load(const std::filesystem::path& path) { return restore(read_checkpoint(path)); }

ItqFit itq_fit(const Eigen::MatrixXd& train, std::size_t bits, std::size_t iterations) {
  const auto n = static_cast<std::size_t>(train.rows());
  const auto dim = static_cast<std::size_t>(train.cols());
  if (bits == 0 || bits > dim) throw ContractError("ITQ bit count must lie in [1, M]");
  if (iterations == 0) throw ContractError("ITQ needs at least one iteration");
  if (n <= bits) throw RankError("ITQ needs more samples than bits");
  if (!train.allFinite()) throw NumericError("non-finite ITQ training data");

  ItqFit fit;
  ItqCodec& codec = fit.codec;
  codec.mean = train.colwise().mean();
  const Eigen::MatrixXd centered = train.rowwise() - codec.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("ITQ covariance eigendecomposition failed");

  // Eigenvalues come ascending; take the largest `bits`.
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double top = values(values.size() - 1);
  const double kept_min = values(values.size() - static_cast<Eigen::Index>(bits));
  if (!(top > 0.0) || kept_min <= 1e-10 * top) {
    throw RankError("covariance rank is below the requested " + std::to_string(bits) + " bits");
  }
  codec.projection.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(bits));
  for (std::size_t j = 0; j < bits; ++j) {
    Eigen::VectorXd v = eig.eigenvectors().col(values.size() - 1 - static_cast<Eigen::Index>(j));
    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    codec.projection.col(static_cast<Eigen::Index>(j)) = v;
  }

  const Eigen::MatrixXd projected = centered * codec.projection;
  codec.rotation = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(bits), static_cast<Eigen::Index>(bits));
  fit.errors.reserve(iterations);
  for (std::size_t t = 0; t < iterations; ++t) {
    const Eigen::MatrixXd b = signs(projected * codec.rotation);
    codec.rotation = procrustes(projected, b);
    fit.errors.push_back((b - projected * codec.rotation).squaredNorm());
  }
  return fit;
}

Eigen::MatrixXd itq_project(const ItqCodec& codec, const Eigen::MatrixXd& embeddings) {
  if (static_cast<std::size_t>(embeddings.cols()) != codec.input_dim()) {
    throw ShapeError("embedding width " + std::to_string(embeddings.cols()) + " != codec input " +
                     std::to_string(codec.input_dim()));
  }
  return ((embeddings.rowwise() - codec.mean) * codec.projection) * codec.rotation;
}

CodeView BitCodes::code(std::size_t i) const {
  if (i >= size()) throw ContractError("code index out of range");
  return {bits, std::span<const std::uint64_t>(words).subspan(i * words_per_code, words_per_code)};
}

bool BitCodes::bit(std::size_t i, std::size_t j) const {
  if (j >= bits) throw ContractError("bit index out of range");
  const CodeView c = code(i);
  return (c.words[j / 64] >> (63 - j % 64)) & 1u;
}

BitCodes pack_signs(const Eigen::MatrixXd& values) {
  BitCodes out;
  out.bits = static_cast<std::size_t>(values.cols());
  out.words_per_code = (out.bits + 63) / 64;
  out.words.assign(static_cast<std::size_t>(values.rows()) * out.words_per_code, 0);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    std::uint64_t* code = out.words.data() + static_cast<std::size_t>(i) * out.words_per_code;
    for (std::size_t j = 0; j < out.bits; ++j) {
      if (values(i, static_cast<Eigen::Index>(j)) >= 0.0) code[j / 64] |= std::uint64_t{1} << (63 - j % 64);
    }
  }
  return out;
}

BitCodes itq_encode(const ItqCodec& codec, const Eigen::MatrixXd& embeddings) {
  return pack_signs(itq_project(codec, embeddings));
}

std::size_t hamming_distance(const CodeView& a, const CodeView& b) {
  if (a.bits != b.bits || a.words.size() != b.words.size()) {
    throw ShapeError("codes of different widths (" + std::to_string(a.bits) + " vs " +
                     std::to_string(b.bits) + " bits)");
  }
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) d += static_cast<std::size_t>(std::popcount(a.words[w] ^ b.words[w]));
  return d;
}

std::vector<std::size_t> hamming_rank(const CodeView& query, const BitCodes& gallery) {
  if (gallery.size() == 0) throw ContractError("empty gallery");
  std::vector<std::size_t> dist(gallery.size());
  for (std::size_t j = 0; j < gallery.size(); ++j) dist[j] = hamming_distance(query, gallery.code(j));
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

}  // namespace anyshot
