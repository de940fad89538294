#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "anyshot/feature_store.hpp"
#include "anyshot/side_info.hpp"

namespace anyshot {

// Gaussian-cluster benchmark with a known latent class structure. Every class
// has a latent code z_c built down a three-level hierarchy
// (root -> 2 super-groups -> 4 groups -> leaves). Features of both modalities
// are A z_c plus a modality offset, a per-pair instance term shared by a
// sketch and its paired image, and independent noise. Text vectors are
// T z_c plus noise, so side information and features are related only
// through z. All features are then rescaled by one factor to unit mean row
// norm, the magnitude of normalized CNN descriptors.
struct SyntheticConfig {
  std::size_t feature_dim = 512;
  std::size_t text_dim = 50;
  std::size_t latent_dim = 8;
  std::size_t sketches_per_class = 100;
  std::size_t images_per_class = 100;
  // Leaves under each of the four groups; 4+3+3+3 gives 13 classes and a
  // 20-node taxonomy.
  std::vector<std::size_t> leaves_per_group{4, 3, 3, 3};
  double super_scale = 1.0;
  double group_scale = 0.8;
  double leaf_scale = 0.6;
  double modality_offset = 1.0;
  double instance_noise = 0.5;
  // Raw nearest-neighbour retrieval over the seen classes is about 0.5 mAP.
  double feature_noise = 3.0;
  double text_noise = 0.1;
  std::uint64_t seed = 0;
};

struct SyntheticBenchmark {
  FeatureSet sketches;
  FeatureSet images;
  std::vector<std::string> class_names;
  std::vector<std::string> taxonomy_nodes;
  std::vector<std::pair<std::size_t, std::size_t>> taxonomy_edges;  // child -> parent
  std::vector<std::size_t> class_nodes;
  Eigen::MatrixXd text;    // C x text_dim
  Eigen::MatrixXd latent;  // C x latent_dim

  Taxonomy taxonomy() const;
};

SyntheticBenchmark make_synthetic(const SyntheticConfig& config);

// sketches.spfx, images.spfx, taxonomy.txt and wordvecs.txt in `dir`.
void write_synthetic(const SyntheticBenchmark& bench, const std::filesystem::path& dir);

}  // namespace anyshot
