#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "anyshot/checkpoint.hpp"

namespace anyshot {

// Learned binarizer: codes are sign(((x - mean) * projection) * rotation).
struct ItqCodec {
  Eigen::RowVectorXd mean;     // 1 x M
  Eigen::MatrixXd projection;  // M x b, top principal directions
  Eigen::MatrixXd rotation;    // b x b, orthogonal

  std::size_t bits() const { return static_cast<std::size_t>(rotation.cols()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }

  // Tensors "itq.mean", "itq.projection", "itq.rotation".
  void store(TensorArchive& archive) const;
  static ItqCodec restore(const TensorArchive& archive);
  void save(const std::filesystem::path& path) const;
  static ItqCodec load(const std::filesystem::path& path);
};

struct ItqFit {
  ItqCodec codec;
  // errors[t] = ||B_t - V R_t||_F^2 after the t-th sign/rotation round.
  std::vector<double> errors;
};

// Centers, projects onto the top-`bits` principal directions and alternates
// sign assignment with orthogonal Procrustes updates, starting from the
// identity rotation. Throws RankError when the data cannot support `bits`
// directions.
ItqFit itq_fit(const Eigen::MatrixXd& train, std::size_t bits, std::size_t iterations = 50);

// Real-valued coordinates before the sign step.
Eigen::MatrixXd itq_project(const ItqCodec& codec, const Eigen::MatrixXd& embeddings);

struct CodeView {
  std::size_t bits = 0;
  std::span<const std::uint64_t> words;
};

// Packed codes, most significant bit first; bit j of a code lives in word
// j / 64 at position 63 - j % 64. A set bit means a non-negative coordinate.
struct BitCodes {
  std::size_t bits = 0;
  std::size_t words_per_code = 0;
  std::vector<std::uint64_t> words;

  std::size_t size() const { return words_per_code == 0 ? 0 : words.size() / words_per_code; }
  CodeView code(std::size_t i) const;
  bool bit(std::size_t i, std::size_t j) const;
};

// One code per row: bit j set iff values(i, j) >= 0.
BitCodes pack_signs(const Eigen::MatrixXd& values);

BitCodes itq_encode(const ItqCodec& codec, const Eigen::MatrixXd& embeddings);

std::size_t hamming_distance(const CodeView& a, const CodeView& b);

// Gallery indices by ascending Hamming distance, ties by ascending index.
std::vector<std::size_t> hamming_rank(const CodeView& query, const BitCodes& gallery);

}  // namespace anyshot
