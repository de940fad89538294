#include <algorithm>
#include <cmath>

#include "anyshot/errors.hpp"
#include "anyshot/rng.hpp"
#include "anyshot/sem_pcyc.hpp"

namespace anyshot {
namespace {

// Per-net init streams so adding a net never reshuffles the others.
enum NetStream : std::uint64_t {
  kStreamGsk = 1,
  kStreamGim,
  kStreamFsk,
  kStreamFim,
  kStreamDse,
  kStreamDsk,
  kStreamDim,
  kStreamTheta,
  kStreamEnc,
  kStreamDec,
};

using Acts = std::vector<Activation>;
const Acts kGeneratorActs{Activation::kRelu};
const Acts kInverseActs{Activation::kIdentity};
const Acts kDiscActs{Activation::kLeakyRelu, Activation::kSigmoid};
const Acts kLinearActs{Activation::kIdentity};
const Acts kSigmoidActs{Activation::kSigmoid};

struct NetSlot {
  const char* name;
  DenseNet SemPcycModel::*net;
  const Acts* acts;
};

const NetSlot kSlots[] = {
    {"G_sk", &SemPcycModel::sketch_to_semantic, &kGeneratorActs},
    {"G_im", &SemPcycModel::image_to_semantic, &kGeneratorActs},
    {"F_sk", &SemPcycModel::semantic_to_sketch, &kInverseActs},
    {"F_im", &SemPcycModel::semantic_to_image, &kInverseActs},
    {"D_se", &SemPcycModel::semantic_disc, &kDiscActs},
    {"D_sk", &SemPcycModel::sketch_disc, &kDiscActs},
    {"D_im", &SemPcycModel::image_disc, &kDiscActs},
    {"theta", &SemPcycModel::classifier, &kLinearActs},
    {"f", &SemPcycModel::side_encoder, &kSigmoidActs},
    {"g", &SemPcycModel::side_decoder, &kSigmoidActs},
};

Eigen::RowVectorXd round_to_float(const Eigen::RowVectorXd& v) {
  return v.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

void put_net(TensorArchive& archive, const std::string& name, const DenseNet& net) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    archive.put_matrix(name + ".w" + std::to_string(i), net.layer(i).weight);
    archive.put_matrix(name + ".b" + std::to_string(i), net.layer(i).bias);
  }
}

DenseNet get_net(const TensorArchive& archive, const std::string& name, const Acts& acts) {
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    DenseLayer l;
    l.weight = archive.matrix(name + ".w" + std::to_string(i));
    l.bias = archive.matrix(name + ".b" + std::to_string(i));
    l.activation = acts[i];
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

void append_params(std::vector<Eigen::MatrixXd*>& out, DenseNet& net) {
  for (auto* p : net.parameters()) out.push_back(p);
}

}  // namespace

std::optional<std::size_t> SemPcycModel::classifier_column(std::uint32_t class_index) const {
  const auto it = std::find(classifier_classes.begin(), classifier_classes.end(), class_index);
  if (it == classifier_classes.end()) return std::nullopt;
  return static_cast<std::size_t>(it - classifier_classes.begin());
}

Eigen::MatrixXd SemPcycModel::scale_side(const Eigen::MatrixXd& raw) const {
  if (static_cast<std::size_t>(raw.cols()) != shape.side_dim || side_min.size() != raw.cols()) {
    throw ShapeError("side-information width " + std::to_string(raw.cols()) + " != model k " +
                     std::to_string(shape.side_dim));
  }
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const double lo = side_min(j);
    const double range = side_max(j) - lo;
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      out(i, j) = range > 0.0 ? std::clamp((raw(i, j) - lo) / range, 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

Eigen::MatrixXd SemPcycModel::encode_side(const Eigen::MatrixXd& scaled) const {
  if (!shape.use_side_encoder) {
    if (static_cast<std::size_t>(scaled.cols()) != shape.semantic_dim) {
      throw ShapeError("side-information width does not match the semantic space");
    }
    return scaled;
  }
  return predict(side_encoder, scaled);
}

TensorArchive SemPcycModel::to_archive() const {
  TensorArchive archive;
  Eigen::VectorXd meta(5);
  meta << static_cast<double>(shape.feature_dim), static_cast<double>(shape.semantic_dim),
      static_cast<double>(shape.side_dim), static_cast<double>(shape.disc_hidden),
      shape.use_side_encoder ? 1.0 : 0.0;
  archive.put_vector("meta.shape", meta);
  // Four 16-bit limbs keep the 64-bit seed exact in float32.
  Eigen::VectorXd seed_limbs(4);
  for (int i = 0; i < 4; ++i) seed_limbs(i) = static_cast<double>((seed >> (16 * i)) & 0xffffu);
  archive.put_vector("meta.seed", seed_limbs);
  Eigen::VectorXd classes(static_cast<Eigen::Index>(classifier_classes.size()));
  for (std::size_t i = 0; i < classifier_classes.size(); ++i) {
    classes(static_cast<Eigen::Index>(i)) = classifier_classes[i];
  }
  archive.put_vector("theta.classes", classes);
  archive.put_vector("scaler.min", side_min.transpose());
  archive.put_vector("scaler.max", side_max.transpose());
  for (const auto& slot : kSlots) {
    const DenseNet& net = this->*slot.net;
    if (net.num_layers() > 0) put_net(archive, slot.name, net);
  }
  return archive;
}

SemPcycModel SemPcycModel::from_archive(const TensorArchive& archive) {
  SemPcycModel m;
  const Eigen::VectorXd meta = archive.vector("meta.shape");
  if (meta.size() != 5) throw FormatError("checkpoint meta.shape must have 5 entries");
  m.shape.feature_dim = static_cast<std::size_t>(meta(0));
  m.shape.semantic_dim = static_cast<std::size_t>(meta(1));
  m.shape.side_dim = static_cast<std::size_t>(meta(2));
  m.shape.disc_hidden = static_cast<std::size_t>(meta(3));
  m.shape.use_side_encoder = meta(4) != 0.0;
  const Eigen::VectorXd limbs = archive.vector("meta.seed");
  if (limbs.size() != 4) throw FormatError("checkpoint meta.seed must have 4 entries");
  for (int i = 0; i < 4; ++i) m.seed |= static_cast<std::uint64_t>(limbs(i)) << (16 * i);
  const Eigen::VectorXd classes = archive.vector("theta.classes");
  for (Eigen::Index i = 0; i < classes.size(); ++i) {
    m.classifier_classes.push_back(static_cast<std::uint32_t>(classes(i)));
  }
  m.side_min = archive.vector("scaler.min").transpose();
  m.side_max = archive.vector("scaler.max").transpose();
  for (const auto& slot : kSlots) {
    const bool optional = slot.net == &SemPcycModel::side_encoder || slot.net == &SemPcycModel::side_decoder;
    if (optional && !m.shape.use_side_encoder) continue;
    m.*slot.net = get_net(archive, slot.name, *slot.acts);
  }

  const auto d = m.shape.feature_dim;
  const auto M = m.shape.semantic_dim;
  const auto k = m.shape.side_dim;
  auto expect = [](bool ok, const char* what) {
    if (!ok) throw ShapeError(std::string("checkpoint: inconsistent ") + what);
  };
  expect(m.sketch_to_semantic.input_dim() == d && m.sketch_to_semantic.output_dim() == M, "G_sk");
  expect(m.image_to_semantic.input_dim() == d && m.image_to_semantic.output_dim() == M, "G_im");
  expect(m.semantic_to_sketch.input_dim() == M && m.semantic_to_sketch.output_dim() == d, "F_sk");
  expect(m.semantic_to_image.input_dim() == M && m.semantic_to_image.output_dim() == d, "F_im");
  expect(m.semantic_disc.input_dim() == M && m.semantic_disc.output_dim() == 1, "D_se");
  expect(m.sketch_disc.input_dim() == d && m.sketch_disc.output_dim() == 1, "D_sk");
  expect(m.image_disc.input_dim() == d && m.image_disc.output_dim() == 1, "D_im");
  expect(m.classifier.input_dim() == M && m.classifier.output_dim() == m.classifier_classes.size(),
         "classifier");
  expect(static_cast<std::size_t>(m.side_min.size()) == k && static_cast<std::size_t>(m.side_max.size()) == k,
         "scaler");
  if (m.shape.use_side_encoder) {
    expect(m.side_encoder.input_dim() == k && m.side_encoder.output_dim() == M, "encoder");
    expect(m.side_decoder.input_dim() == M && m.side_decoder.output_dim() == k, "decoder");
  } else {
    expect(M == k, "semantic width without encoder");
  }
  return m;
}

void SemPcycModel::save(const std::filesystem::path& path) const { write_checkpoint(to_archive(), path); }

SemPcycModel SemPcycModel::load(const std::filesystem::path& path) {
  return from_archive(read_checkpoint(path));
}

bool operator==(const SemPcycModel& a, const SemPcycModel& b) {
  if (a.shape.feature_dim != b.shape.feature_dim || a.shape.semantic_dim != b.shape.semantic_dim ||
      a.shape.side_dim != b.shape.side_dim || a.shape.disc_hidden != b.shape.disc_hidden ||
      a.shape.use_side_encoder != b.shape.use_side_encoder || a.seed != b.seed ||
      a.classifier_classes != b.classifier_classes || a.side_min != b.side_min ||
      a.side_max != b.side_max) {
    return false;
  }
  for (const auto& slot : kSlots) {
    if (!(a.*slot.net == b.*slot.net)) return false;
  }
  return true;
}

SemPcycModel make_model(const ModelShape& shape, const ClassEmbeddingTable& side,
                        std::vector<std::uint32_t> classifier_classes, std::uint64_t seed) {
  SemPcycModel m;
  m.shape = shape;
  m.shape.side_dim = side.dim();
  if (m.shape.side_dim == 0) throw ShapeError("side information has zero width");
  if (!m.shape.use_side_encoder) m.shape.semantic_dim = m.shape.side_dim;
  if (m.shape.feature_dim == 0 || m.shape.semantic_dim == 0 || m.shape.disc_hidden == 0) {
    throw ShapeError("model dimensions must be positive");
  }
  std::sort(classifier_classes.begin(), classifier_classes.end());
  classifier_classes.erase(std::unique(classifier_classes.begin(), classifier_classes.end()),
                           classifier_classes.end());
  if (classifier_classes.empty()) throw ContractError("model needs at least one training class");
  for (auto c : classifier_classes) {
    if (c >= side.num_classes()) {
      throw MappingError("class " + std::to_string(c) + " has no side information");
    }
  }
  m.classifier_classes = std::move(classifier_classes);
  m.seed = seed;

  std::vector<Eigen::Index> rows(m.classifier_classes.begin(), m.classifier_classes.end());
  const Eigen::MatrixXd seen = side.fused(rows, Eigen::all);
  m.side_min = round_to_float(seen.colwise().minCoeff());
  m.side_max = round_to_float(seen.colwise().maxCoeff());

  const auto d = m.shape.feature_dim;
  const auto M = m.shape.semantic_dim;
  const auto k = m.shape.side_dim;
  const auto h = m.shape.disc_hidden;
  m.sketch_to_semantic = DenseNet({d, M}, kGeneratorActs, mix_seed(seed, kStreamGsk));
  m.image_to_semantic = DenseNet({d, M}, kGeneratorActs, mix_seed(seed, kStreamGim));
  m.semantic_to_sketch = DenseNet({M, d}, kInverseActs, mix_seed(seed, kStreamFsk));
  m.semantic_to_image = DenseNet({M, d}, kInverseActs, mix_seed(seed, kStreamFim));
  m.semantic_disc = DenseNet({M, h, 1}, kDiscActs, mix_seed(seed, kStreamDse));
  m.sketch_disc = DenseNet({d, h, 1}, kDiscActs, mix_seed(seed, kStreamDsk));
  m.image_disc = DenseNet({d, h, 1}, kDiscActs, mix_seed(seed, kStreamDim));
  m.classifier = DenseNet({M, m.classifier_classes.size()}, kLinearActs, mix_seed(seed, kStreamTheta));
  if (m.shape.use_side_encoder) {
    m.side_encoder = DenseNet({k, M}, kSigmoidActs, mix_seed(seed, kStreamEnc));
    m.side_decoder = DenseNet({M, k}, kSigmoidActs, mix_seed(seed, kStreamDec));
  }
  return m;
}

void extend_classifier(SemPcycModel& model, std::span<const std::uint32_t> classes) {
  std::vector<std::uint32_t> added;
  for (auto c : classes) {
    if (!model.classifier_column(c) && std::find(added.begin(), added.end(), c) == added.end()) {
      added.push_back(c);
    }
  }
  if (added.empty()) return;
  std::sort(added.begin(), added.end());
  DenseLayer layer = model.classifier.layer(0);
  const Eigen::Index old_cols = layer.weight.cols();
  const auto extra = static_cast<Eigen::Index>(added.size());
  layer.weight.conservativeResize(Eigen::NoChange, old_cols + extra);
  layer.weight.rightCols(extra).setZero();
  layer.bias.conservativeResize(Eigen::NoChange, old_cols + extra);
  layer.bias.rightCols(extra).setZero();
  model.classifier = DenseNet({std::move(layer)});
  model.classifier_classes.insert(model.classifier_classes.end(), added.begin(), added.end());
}

Eigen::MatrixXd encode(const SemPcycModel& model, const Eigen::MatrixXd& batch, Modality modality) {
  return predict(modality == Modality::kSketch ? model.sketch_to_semantic : model.image_to_semantic, batch);
}

Eigen::MatrixXd encode(const SemPcycModel& model, const FeatureSet& features) {
  return encode(model, features.vectors.cast<double>(), features.modality);
}

std::vector<Eigen::MatrixXd*> discriminator_parameters(SemPcycModel& model) {
  std::vector<Eigen::MatrixXd*> out;
  append_params(out, model.semantic_disc);
  append_params(out, model.sketch_disc);
  append_params(out, model.image_disc);
  return out;
}

std::vector<Eigen::MatrixXd*> generator_parameters(SemPcycModel& model) {
  std::vector<Eigen::MatrixXd*> out;
  append_params(out, model.sketch_to_semantic);
  append_params(out, model.image_to_semantic);
  append_params(out, model.semantic_to_sketch);
  append_params(out, model.semantic_to_image);
  append_params(out, model.classifier);
  if (model.shape.use_side_encoder) {
    append_params(out, model.side_encoder);
    append_params(out, model.side_decoder);
  }
  return out;
}

}  // namespace anyshot
