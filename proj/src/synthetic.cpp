#include <charconv>
#include <fstream>

#include "anyshot/errors.hpp"
#include "anyshot/rng.hpp"
#include "anyshot/synthetic.hpp"

namespace anyshot {
namespace {

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * standard_normal(rng);
  }
  return m;
}

std::string two_digits(std::size_t i) {
  return (i < 10 ? "0" : "") + std::to_string(i);
}

FeatureSet make_modality(Modality modality, std::size_t per_class, const Eigen::MatrixXd& means,
                         const Eigen::RowVectorXd& offset, const std::vector<Eigen::MatrixXd>& instances,
                         double noise, Rng& rng, const std::vector<std::string>& names) {
  const auto classes = static_cast<std::size_t>(means.rows());
  FeatureSet fs;
  fs.modality = modality;
  fs.label_names = names;
  fs.vectors.resize(static_cast<Eigen::Index>(classes * per_class), means.cols());
  fs.pair_ids.emplace();
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto row = static_cast<Eigen::Index>(c * per_class + i);
      Eigen::RowVectorXd x = means.row(static_cast<Eigen::Index>(c)) + offset;
      if (i < static_cast<std::size_t>(instances[c].rows())) x += instances[c].row(static_cast<Eigen::Index>(i));
      for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += noise * standard_normal(rng);
      fs.vectors.row(row) = x.cast<float>();
      fs.labels.push_back(static_cast<std::uint32_t>(c));
      fs.pair_ids->push_back(static_cast<std::uint64_t>(c) * 1000000u + i);
    }
  }
  return fs;
}

}  // namespace

Taxonomy SyntheticBenchmark::taxonomy() const {
  return Taxonomy(taxonomy_nodes, taxonomy_edges, class_nodes);
}

SyntheticBenchmark make_synthetic(const SyntheticConfig& config) {
  if (config.leaves_per_group.size() != 4) throw ConfigError("synthetic taxonomy needs four groups");
  if (config.feature_dim == 0 || config.text_dim == 0 || config.latent_dim == 0 ||
      config.sketches_per_class == 0 || config.images_per_class == 0) {
    throw ConfigError("synthetic dimensions and counts must be positive");
  }
  SyntheticBenchmark b;
  Rng rng = make_rng(config.seed, 0x5e7);
  const auto r = static_cast<Eigen::Index>(config.latent_dim);

  // Node order: root, super-groups, groups, leaves.
  b.taxonomy_nodes = {"entity", "super_0", "super_1"};
  for (std::size_t g = 0; g < 4; ++g) {
    b.taxonomy_nodes.push_back("group_" + std::to_string(g));
    b.taxonomy_edges.emplace_back(3 + g, 1 + g / 2);
  }
  b.taxonomy_edges.emplace_back(1, 0);
  b.taxonomy_edges.emplace_back(2, 0);

  const Eigen::MatrixXd supers = gaussian(rng, 2, r, config.super_scale);
  const Eigen::MatrixXd groups = gaussian(rng, 4, r, config.group_scale);
  std::vector<Eigen::RowVectorXd> codes;
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t l = 0; l < config.leaves_per_group[g]; ++l) {
      const std::size_t c = b.class_names.size();
      b.class_names.push_back("class_" + two_digits(c));
      b.taxonomy_nodes.push_back(b.class_names.back());
      const std::size_t node = b.taxonomy_nodes.size() - 1;
      b.taxonomy_edges.emplace_back(node, 3 + g);
      b.class_nodes.push_back(node);
      codes.push_back(supers.row(static_cast<Eigen::Index>(g / 2)) +
                      groups.row(static_cast<Eigen::Index>(g)) +
                      gaussian(rng, 1, r, config.leaf_scale));
    }
  }
  const auto classes = static_cast<Eigen::Index>(b.class_names.size());
  b.latent.resize(classes, r);
  for (Eigen::Index c = 0; c < classes; ++c) b.latent.row(c) = codes[static_cast<std::size_t>(c)];

  const auto d = static_cast<Eigen::Index>(config.feature_dim);
  const Eigen::MatrixXd a = gaussian(rng, r, d, 1.0 / std::sqrt(static_cast<double>(r)));
  const Eigen::MatrixXd t = gaussian(rng, r, static_cast<Eigen::Index>(config.text_dim),
                                     1.0 / std::sqrt(static_cast<double>(r)));
  b.text = b.latent * t + gaussian(rng, classes, t.cols(), config.text_noise);
  const Eigen::MatrixXd means = b.latent * a;
  const Eigen::RowVectorXd sketch_offset = gaussian(rng, 1, d, config.modality_offset);
  const Eigen::RowVectorXd image_offset = gaussian(rng, 1, d, config.modality_offset);

  const std::size_t paired = std::min(config.sketches_per_class, config.images_per_class);
  std::vector<Eigen::MatrixXd> instances;
  for (Eigen::Index c = 0; c < classes; ++c) {
    instances.push_back(gaussian(rng, static_cast<Eigen::Index>(paired), d, config.instance_noise));
  }
  b.sketches = make_modality(Modality::kSketch, config.sketches_per_class, means, sketch_offset, instances,
                             config.feature_noise, rng, b.class_names);
  b.images = make_modality(Modality::kImage, config.images_per_class, means, image_offset, instances,
                           config.feature_noise, rng, b.class_names);

  double norms = 0.0;
  for (const FeatureSet* fs : {&b.sketches, &b.images}) {
    norms += fs->vectors.cast<double>().rowwise().norm().sum();
  }
  const double rows = static_cast<double>(b.sketches.size() + b.images.size());
  const float rescale = static_cast<float>(rows / norms);
  b.sketches.vectors *= rescale;
  b.images.vectors *= rescale;
  return b;
}

void write_synthetic(const SyntheticBenchmark& bench, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_feature_file(bench.sketches, dir / "sketches.spfx");
  write_feature_file(bench.images, dir / "images.spfx");

  std::ofstream tax(dir / "taxonomy.txt", std::ios::binary);
  if (!tax) throw IoError("cannot write '" + (dir / "taxonomy.txt").string() + "'");
  tax << "[nodes]\n";
  for (const auto& n : bench.taxonomy_nodes) tax << n << '\n';
  tax << "[edges]\n";
  for (const auto& [child, parent] : bench.taxonomy_edges) {
    tax << bench.taxonomy_nodes[child] << '\t' << bench.taxonomy_nodes[parent] << '\n';
  }
  tax << "[classes]\n";
  for (std::size_t c = 0; c < bench.class_names.size(); ++c) {
    tax << bench.class_names[c] << '\t' << bench.taxonomy_nodes[bench.class_nodes[c]] << '\n';
  }
  if (!tax) throw IoError("failed writing taxonomy");

  std::ofstream wv(dir / "wordvecs.txt", std::ios::binary);
  if (!wv) throw IoError("cannot write '" + (dir / "wordvecs.txt").string() + "'");
  char buf[64];
  for (Eigen::Index c = 0; c < bench.text.rows(); ++c) {
    wv << bench.class_names[static_cast<std::size_t>(c)];
    for (Eigen::Index j = 0; j < bench.text.cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, bench.text(c, j));
      wv << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    wv << '\n';
  }
  if (!wv) throw IoError("failed writing word vectors");
}

}  // namespace anyshot
