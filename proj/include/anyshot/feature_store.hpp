#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace anyshot {

enum class Modality : std::uint8_t { kSketch = 0, kImage = 1 };

const char* to_string(Modality modality);

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Labeled feature vectors of one modality. Labels index into label_names,
// which is the full class vocabulary of the dataset (shared by both
// modalities), so subsets keep global class indices.
struct FeatureSet {
  Modality modality = Modality::kSketch;
  FeatureMatrix vectors;              // N x d
  std::vector<std::uint32_t> labels;  // N
  std::vector<std::string> label_names;
  std::optional<std::vector<std::uint64_t>> pair_ids;  // N when present

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors.cols()); }
  std::size_t num_classes() const { return label_names.size(); }
  bool empty() const { return labels.empty(); }

  // Row indices carrying the given label, ascending.
  std::vector<std::size_t> rows_of_class(std::uint32_t label) const;

  // Checks every stored invariant. allow_empty permits N = 0, which only
  // in-memory subsets (e.g. a 0-shot auxiliary set) may have.
  void validate(bool allow_empty = false) const;

  friend bool operator==(const FeatureSet& a, const FeatureSet& b);
};

// Rows of `fs` in the given order; class vocabulary is kept whole.
FeatureSet subset(const FeatureSet& fs, std::span<const std::size_t> rows);

// Concatenation of two sets of the same modality, dimension and vocabulary.
FeatureSet concat(const FeatureSet& a, const FeatureSet& b);

// SPFX v1 reader/writer (little-endian; see README for the layout).
FeatureSet load_feature_file(const std::filesystem::path& path);
void write_feature_file(const FeatureSet& fs, const std::filesystem::path& path);

struct SplitSpec {
  std::vector<std::uint32_t> seen_classes;    // ascending
  std::vector<std::uint32_t> unseen_classes;  // ascending
  std::size_t k = 0;
  std::uint64_t seed = 0;

  void validate(std::size_t num_classes) const;
};

// Picks n_unseen test classes uniformly among the classes that have at least
// min_images_per_test_class images; the rest become seen classes.
SplitSpec build_split(const FeatureSet& sketches, const FeatureSet& images, std::size_t n_unseen,
                      std::uint64_t seed, std::size_t min_images_per_test_class = 0);

struct ModalityPair {
  FeatureSet sketches;
  FeatureSet images;
};

struct Episode {
  ModalityPair train_seen;
  ModalityPair aux_unseen;  // k sketches + k images per unseen class
  ModalityPair test;        // remaining unseen-class instances
};

// Per unseen class and modality the instances are permuted once from the
// split seed and the first k form the auxiliary set, so for a fixed seed the
// auxiliary sets are nested in k.
Episode sample_episode(const FeatureSet& sketches, const FeatureSet& images,
                       const SplitSpec& split);

}  // namespace anyshot
