#include "anyshot/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "anyshot/detail/binary_io.hpp"
#include "anyshot/errors.hpp"
#include "anyshot/rng.hpp"

namespace anyshot {
namespace {

constexpr char kMagic[4] = {'S', 'P', 'F', 'X'};
constexpr std::uint32_t kVersion = 1;

std::string describe(const std::filesystem::path& path) { return "'" + path.string() + "'"; }

}  // namespace

const char* to_string(Modality modality) {
  return modality == Modality::kSketch ? "sketch" : "image";
}

std::vector<std::size_t> FeatureSet::rows_of_class(std::uint32_t label) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) rows.push_back(i);
  }
  return rows;
}

void FeatureSet::validate(bool allow_empty) const {
  if (label_names.empty()) throw FormatError("feature set needs at least one class name");
  if (!allow_empty && labels.empty()) throw FormatError("feature set needs at least one row");
  if (vectors.cols() < 1) throw FormatError("feature dimension must be at least 1");
  if (static_cast<std::size_t>(vectors.rows()) != labels.size()) {
    throw ShapeError("feature rows and label count differ");
  }
  for (std::uint32_t label : labels) {
    if (label >= label_names.size()) {
      throw CorruptionError("label index " + std::to_string(label) + " >= class count " +
                            std::to_string(label_names.size()));
    }
  }
  for (const auto& name : label_names) {
    if (name.find('\0') != std::string::npos) throw FormatError("class name contains NUL");
  }
  if (pair_ids && pair_ids->size() != labels.size()) {
    throw ShapeError("pair_ids length differs from row count");
  }
  if (!vectors.allFinite()) throw CorruptionError("non-finite feature value");
}

bool operator==(const FeatureSet& a, const FeatureSet& b) {
  if (a.modality != b.modality || a.labels != b.labels || a.label_names != b.label_names ||
      a.pair_ids != b.pair_ids || a.vectors.rows() != b.vectors.rows() ||
      a.vectors.cols() != b.vectors.cols()) {
    return false;
  }
  // Bitwise comparison: -0.0 and 0.0 are distinct for round-trip purposes.
  const auto bytes = static_cast<std::size_t>(a.vectors.size()) * sizeof(float);
  return bytes == 0 || std::memcmp(a.vectors.data(), b.vectors.data(), bytes) == 0;
}

FeatureSet subset(const FeatureSet& fs, std::span<const std::size_t> rows) {
  FeatureSet out;
  out.modality = fs.modality;
  out.label_names = fs.label_names;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), fs.vectors.cols());
  out.labels.reserve(rows.size());
  if (fs.pair_ids) out.pair_ids.emplace().reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= fs.size()) throw ContractError("subset row out of range");
    out.vectors.row(static_cast<Eigen::Index>(i)) = fs.vectors.row(static_cast<Eigen::Index>(r));
    out.labels.push_back(fs.labels[r]);
    if (fs.pair_ids) out.pair_ids->push_back((*fs.pair_ids)[r]);
  }
  return out;
}

FeatureSet concat(const FeatureSet& a, const FeatureSet& b) {
  if (a.modality != b.modality) throw ContractError("cannot concatenate different modalities");
  if (a.label_names != b.label_names) throw ContractError("class vocabularies differ");
  if (a.vectors.cols() != b.vectors.cols()) throw ShapeError("feature dimensions differ");
  FeatureSet out;
  out.modality = a.modality;
  out.label_names = a.label_names;
  out.vectors.resize(a.vectors.rows() + b.vectors.rows(), a.vectors.cols());
  out.vectors.topRows(a.vectors.rows()) = a.vectors;
  out.vectors.bottomRows(b.vectors.rows()) = b.vectors;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  if (a.pair_ids && b.pair_ids) {
    out.pair_ids = *a.pair_ids;
    out.pair_ids->insert(out.pair_ids->end(), b.pair_ids->begin(), b.pair_ids->end());
  }
  return out;
}

FeatureSet load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + describe(path));

  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad magic in feature file " + describe(path));
  }
  const auto version = detail::read_le<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw FormatError("unsupported feature file version " + std::to_string(version));
  }
  const auto modality = detail::read_le<std::uint8_t>(in, "modality");
  if (modality > 1) throw FormatError("unknown modality code " + std::to_string(modality));
  const auto n = detail::read_le<std::uint32_t>(in, "row count");
  const auto d = detail::read_le<std::uint32_t>(in, "dimension");
  const auto c = detail::read_le<std::uint32_t>(in, "class count");
  const auto has_pairs = detail::read_le<std::uint8_t>(in, "pair flag");
  if (c == 0) throw FormatError("feature file declares zero classes");
  if (n == 0 || d == 0) throw FormatError("feature file declares an empty matrix");
  if (has_pairs > 1) throw FormatError("invalid pair flag");

  FeatureSet fs;
  fs.modality = static_cast<Modality>(modality);
  fs.label_names.reserve(c);
  for (std::uint32_t i = 0; i < c; ++i) {
    std::string name;
    if (!std::getline(in, name, '\0')) throw CorruptionError("truncated class name table");
    if (in.eof()) throw CorruptionError("unterminated class name");
    fs.label_names.push_back(std::move(name));
  }

  fs.labels.resize(n);
  detail::read_exact(in, reinterpret_cast<char*>(fs.labels.data()), n * sizeof(std::uint32_t),
                     "labels");
  for (std::uint32_t label : fs.labels) {
    if (label >= c) {
      throw CorruptionError("label index " + std::to_string(label) + " >= class count " +
                            std::to_string(c));
    }
  }
  if (has_pairs) {
    fs.pair_ids.emplace(n);
    detail::read_exact(in, reinterpret_cast<char*>(fs.pair_ids->data()),
                       n * sizeof(std::uint64_t), "pair ids");
  }
  fs.vectors.resize(n, d);
  detail::read_exact(in, reinterpret_cast<char*>(fs.vectors.data()),
                     static_cast<std::size_t>(n) * d * sizeof(float), "feature rows");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CorruptionError("trailing bytes after feature rows in " + describe(path));
  }
  if (!fs.vectors.allFinite()) throw CorruptionError("non-finite feature value in " + describe(path));
  return fs;
}

void write_feature_file(const FeatureSet& fs, const std::filesystem::path& path) {
  fs.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file " + describe(path));

  out.write(kMagic, 4);
  detail::write_le<std::uint32_t>(out, kVersion);
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(fs.modality));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.dim()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.num_classes()));
  detail::write_le<std::uint8_t>(out, fs.pair_ids ? 1 : 0);
  for (const auto& name : fs.label_names) out.write(name.c_str(), static_cast<std::streamsize>(name.size() + 1));
  out.write(reinterpret_cast<const char*>(fs.labels.data()),
            static_cast<std::streamsize>(fs.labels.size() * sizeof(std::uint32_t)));
  if (fs.pair_ids) {
    out.write(reinterpret_cast<const char*>(fs.pair_ids->data()),
              static_cast<std::streamsize>(fs.pair_ids->size() * sizeof(std::uint64_t)));
  }
  out.write(reinterpret_cast<const char*>(fs.vectors.data()),
            static_cast<std::streamsize>(fs.vectors.size() * sizeof(float)));
  out.flush();
  if (!out) throw IoError("write failed for " + describe(path));
}

void SplitSpec::validate(std::size_t num_classes) const {
  if (seen_classes.empty() || unseen_classes.empty()) {
    throw SplitError("seen and unseen class sets must both be non-empty");
  }
  std::set<std::uint32_t> seen(seen_classes.begin(), seen_classes.end());
  for (std::uint32_t c : unseen_classes) {
    if (seen.count(c)) throw SplitError("class " + std::to_string(c) + " is both seen and unseen");
  }
  for (auto c : seen_classes) {
    if (c >= num_classes) throw SplitError("seen class out of range");
  }
  for (auto c : unseen_classes) {
    if (c >= num_classes) throw SplitError("unseen class out of range");
  }
}

SplitSpec build_split(const FeatureSet& sketches, const FeatureSet& images, std::size_t n_unseen,
                      std::uint64_t seed, std::size_t min_images_per_test_class) {
  if (sketches.label_names != images.label_names) {
    throw SplitError("sketch and image files use different class vocabularies");
  }
  const std::size_t num_classes = images.num_classes();
  if (n_unseen == 0) throw SplitError("at least one unseen class is required");
  if (n_unseen >= num_classes) {
    throw SplitError("n_unseen = " + std::to_string(n_unseen) + " leaves no seen class among " +
                     std::to_string(num_classes));
  }

  std::vector<std::size_t> image_counts(num_classes, 0);
  for (auto label : images.labels) ++image_counts[label];

  // Filter first, then sample.
  std::vector<std::uint32_t> candidates;
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    if (image_counts[c] >= min_images_per_test_class) candidates.push_back(c);
  }
  if (candidates.size() < n_unseen) {
    throw SplitError("only " + std::to_string(candidates.size()) + " classes have >= " +
                     std::to_string(min_images_per_test_class) + " images; need " +
                     std::to_string(n_unseen));
  }

  Rng rng = make_rng(seed, /*stream=*/0x5b11);
  shuffle(std::span<std::uint32_t>(candidates), rng);
  SplitSpec split;
  split.seed = seed;
  split.unseen_classes.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_unseen));
  std::sort(split.unseen_classes.begin(), split.unseen_classes.end());
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    if (!std::binary_search(split.unseen_classes.begin(), split.unseen_classes.end(), c)) {
      split.seen_classes.push_back(c);
    }
  }
  return split;
}

Episode sample_episode(const FeatureSet& sketches, const FeatureSet& images,
                       const SplitSpec& split) {
  if (sketches.label_names != images.label_names) {
    throw EpisodeError("sketch and image files use different class vocabularies");
  }
  split.validate(images.num_classes());

  auto partition = [&](const FeatureSet& fs, std::uint64_t modality_stream,
                       std::vector<std::size_t>& seen_rows, std::vector<std::size_t>& aux_rows,
                       std::vector<std::size_t>& test_rows) {
    for (auto c : split.seen_classes) {
      auto rows = fs.rows_of_class(c);
      seen_rows.insert(seen_rows.end(), rows.begin(), rows.end());
    }
    std::sort(seen_rows.begin(), seen_rows.end());
    for (auto c : split.unseen_classes) {
      auto rows = fs.rows_of_class(c);
      if (rows.size() <= split.k) {
        throw EpisodeError("unseen class '" + fs.label_names[c] + "' has " +
                           std::to_string(rows.size()) + " " + to_string(fs.modality) +
                           " instances; k = " + std::to_string(split.k) + " needs more");
      }
      // The permutation depends on (seed, modality, class) only, never on k.
      Rng rng = make_rng(mix_seed(split.seed, modality_stream), c);
      shuffle(std::span<std::size_t>(rows), rng);
      aux_rows.insert(aux_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(split.k));
      std::vector<std::size_t> rest(rows.begin() + static_cast<std::ptrdiff_t>(split.k), rows.end());
      test_rows.insert(test_rows.end(), rest.begin(), rest.end());
    }
    std::sort(test_rows.begin(), test_rows.end());
  };

  std::vector<std::size_t> sk_seen, sk_aux, sk_test, im_seen, im_aux, im_test;
  partition(sketches, 0xa11ce, sk_seen, sk_aux, sk_test);
  partition(images, 0xb0b, im_seen, im_aux, im_test);

  Episode ep;
  ep.train_seen = {subset(sketches, sk_seen), subset(images, im_seen)};
  ep.aux_unseen = {subset(sketches, sk_aux), subset(images, im_aux)};
  ep.test = {subset(sketches, sk_test), subset(images, im_test)};
  return ep;
}

}  // namespace anyshot
