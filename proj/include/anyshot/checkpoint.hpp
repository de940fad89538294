#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace anyshot {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;  // row-major
};

// Ordered collection of named float32 tensors; the in-memory image of an
// SPCK file. Doubles are narrowed to float32 on insertion.
class TensorArchive {
 public:
  void put_matrix(const std::string& name, const Eigen::MatrixXd& value);
  void put_vector(const std::string& name, const Eigen::VectorXd& value);
  void put_scalar(const std::string& name, double value);
  void put(NamedTensor tensor);

  bool contains(const std::string& name) const;
  const NamedTensor& get(const std::string& name) const;
  Eigen::MatrixXd matrix(const std::string& name) const;
  Eigen::VectorXd vector(const std::string& name) const;
  double scalar(const std::string& name) const;

  const std::vector<NamedTensor>& tensors() const { return tensors_; }

 private:
  std::vector<NamedTensor> tensors_;
};

void write_checkpoint(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_checkpoint(const std::filesystem::path& path);

}  // namespace anyshot
