#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "anyshot/feature_store.hpp"

namespace anyshot::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "anyshot_";
    if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

// `per_class` rows for each of `classes` classes, random entries.
inline FeatureSet random_features(Modality modality, std::size_t classes, std::size_t per_class,
                                  std::size_t dim, std::uint32_t seed, bool pair_ids = false) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  FeatureSet fs;
  fs.modality = modality;
  for (std::size_t c = 0; c < classes; ++c) fs.label_names.push_back("class_" + std::to_string(c));
  fs.vectors.resize(static_cast<Eigen::Index>(classes * per_class), static_cast<Eigen::Index>(dim));
  if (pair_ids) fs.pair_ids.emplace();
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto row = static_cast<Eigen::Index>(c * per_class + i);
      for (Eigen::Index j = 0; j < fs.vectors.cols(); ++j) fs.vectors(row, j) = normal(gen);
      fs.labels.push_back(static_cast<std::uint32_t>(c));
      if (pair_ids) fs.pair_ids->push_back(c * 1000 + i);
    }
  }
  return fs;
}

}  // namespace anyshot::testing
