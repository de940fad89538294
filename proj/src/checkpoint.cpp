#include "anyshot/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "anyshot/detail/binary_io.hpp"
#include "anyshot/errors.hpp"

namespace anyshot {
namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

void TensorArchive::put(NamedTensor tensor) {
  if (contains(tensor.name)) throw ContractError("duplicate tensor name '" + tensor.name + "'");
  if (element_count(tensor.dims) != tensor.data.size()) {
    throw ShapeError("tensor '" + tensor.name + "' dims disagree with data length");
  }
  tensors_.push_back(std::move(tensor));
}

void TensorArchive::put_matrix(const std::string& name, const Eigen::MatrixXd& value) {
  NamedTensor t{name,
                {static_cast<std::uint32_t>(value.rows()), static_cast<std::uint32_t>(value.cols())},
                {}};
  t.data.reserve(static_cast<std::size_t>(value.size()));
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    for (Eigen::Index c = 0; c < value.cols(); ++c) t.data.push_back(static_cast<float>(value(r, c)));
  }
  put(std::move(t));
}

void TensorArchive::put_vector(const std::string& name, const Eigen::VectorXd& value) {
  NamedTensor t{name, {static_cast<std::uint32_t>(value.size())}, {}};
  for (Eigen::Index i = 0; i < value.size(); ++i) t.data.push_back(static_cast<float>(value(i)));
  put(std::move(t));
}

void TensorArchive::put_scalar(const std::string& name, double value) {
  put(NamedTensor{name, {}, {static_cast<float>(value)}});
}

bool TensorArchive::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const NamedTensor& t) { return t.name == name; });
}

const NamedTensor& TensorArchive::get(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

Eigen::MatrixXd TensorArchive::matrix(const std::string& name) const {
  const auto& t = get(name);
  if (t.dims.size() != 2) throw ShapeError("tensor '" + name + "' is not a matrix");
  Eigen::MatrixXd m(t.dims[0], t.dims[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[i++];
  }
  return m;
}

Eigen::VectorXd TensorArchive::vector(const std::string& name) const {
  const auto& t = get(name);
  if (t.dims.size() != 1) throw ShapeError("tensor '" + name + "' is not a vector");
  Eigen::VectorXd v(t.dims[0]);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = t.data[static_cast<std::size_t>(i)];
  return v;
}

double TensorArchive::scalar(const std::string& name) const {
  const auto& t = get(name);
  if (!t.dims.empty()) throw ShapeError("tensor '" + name + "' is not a scalar");
  return t.data.front();
}

void write_checkpoint(const TensorArchive& archive, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, 4);
  detail::write_le<std::uint32_t>(out, kVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(archive.tensors().size()));
  for (const auto& t : archive.tensors()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::write_le<std::uint32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TensorArchive read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad magic in checkpoint '" + path.string() + "'");
  }
  const auto version = detail::read_le<std::uint32_t>(in, "version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version");
  const auto count = detail::read_le<std::uint32_t>(in, "tensor count");

  TensorArchive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = detail::read_le<std::uint32_t>(in, "name length");
    t.name.resize(name_len);
    detail::read_exact(in, t.name.data(), name_len, "tensor name");
    const auto rank = detail::read_le<std::uint32_t>(in, "rank");
    if (rank > kMaxRank) throw FormatError("tensor rank too large");
    for (std::uint32_t r = 0; r < rank; ++r) t.dims.push_back(detail::read_le<std::uint32_t>(in, "dim"));
    t.data.resize(element_count(t.dims));
    detail::read_exact(in, reinterpret_cast<char*>(t.data.data()), t.data.size() * sizeof(float),
                       "tensor data");
    archive.put(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptionError("trailing bytes in checkpoint");
  return archive;
}

}  // namespace anyshot
