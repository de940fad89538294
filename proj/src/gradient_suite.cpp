#include <algorithm>
#include <cmath>
#include <limits>

#include "anyshot/errors.hpp"
#include "anyshot/gradient_suite.hpp"
#include "anyshot/rng.hpp"
#include "anyshot/sem_pcyc.hpp"

namespace anyshot {
namespace {

constexpr std::size_t kClasses = 3;
constexpr std::size_t kMaxDraws = 10000;

struct Instance {
  SemPcycModel model;
  ClassEmbeddingTable table;
  TrainingBatch batch;
};

Eigen::MatrixXd normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = standard_normal(rng);
  }
  return m;
}

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

double activate(double z, Activation a) {
  switch (a) {
    case Activation::kRelu:
      return z > 0.0 ? z : 0.0;
    case Activation::kLeakyRelu:
      return z > 0.0 ? z : kLeakyReluSlope * z;
    case Activation::kSigmoid:
      return 1.0 / (1.0 + std::exp(-z));
    case Activation::kIdentity:
      break;
  }
  return z;
}

// Smallest |pre-activation| over the piecewise-linear layers of `net`.
double kink_distance(const DenseNet& net, const Eigen::MatrixXd& input) {
  double margin = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd a = input;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const DenseLayer& layer = net.layer(l);
    Eigen::MatrixXd z = a * layer.weight;
    z.rowwise() += layer.bias.row(0);
    if (layer.activation == Activation::kRelu || layer.activation == Activation::kLeakyRelu) {
      margin = std::min(margin, z.cwiseAbs().minCoeff());
    }
    a = z.unaryExpr([&](double v) { return activate(v, layer.activation); });
  }
  return margin;
}

double kink_distance(const SemPcycModel& m, const TrainingBatch& b) {
  const Eigen::MatrixXd enc_sk = m.encode_side(b.sketch_side);
  const Eigen::MatrixXd enc_im = m.encode_side(b.image_side);
  const Eigen::MatrixXd sem_sk = predict(m.sketch_to_semantic, b.sketches);
  const Eigen::MatrixXd sem_im = predict(m.image_to_semantic, b.images);
  const Eigen::MatrixXd back_sk = predict(m.semantic_to_sketch, enc_sk);
  const Eigen::MatrixXd back_im = predict(m.semantic_to_image, enc_im);
  Eigen::MatrixXd real(enc_sk.rows() + enc_im.rows(), enc_sk.cols());
  real << enc_sk, enc_im;

  const double values[] = {
      kink_distance(m.sketch_to_semantic, b.sketches),
      kink_distance(m.image_to_semantic, b.images),
      kink_distance(m.sketch_to_semantic, back_sk),
      kink_distance(m.image_to_semantic, back_im),
      kink_distance(m.semantic_disc, real),
      kink_distance(m.semantic_disc, sem_sk),
      kink_distance(m.semantic_disc, sem_im),
      kink_distance(m.sketch_disc, b.sketches),
      kink_distance(m.sketch_disc, back_sk),
      kink_distance(m.image_disc, b.images),
      kink_distance(m.image_disc, back_im),
      (predict(m.semantic_to_sketch, sem_sk) - b.sketches).cwiseAbs().minCoeff(),
      (predict(m.semantic_to_image, sem_im) - b.images).cwiseAbs().minCoeff(),
      (predict(m.sketch_to_semantic, back_sk) - enc_sk).cwiseAbs().minCoeff(),
      (predict(m.image_to_semantic, back_im) - enc_im).cwiseAbs().minCoeff(),
  };
  return *std::min_element(std::begin(values), std::end(values));
}

void randomize_biases(DenseNet& net, Rng& rng) {
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    DenseLayer& layer = net.mutable_layer(l);
    layer.bias = 0.5 * normal(rng, 1, layer.bias.cols());
  }
}

Instance draw_instance(Rng& rng, double margin) {
  for (std::size_t attempt = 0; attempt < kMaxDraws; ++attempt) {
    Instance in;
    ModelShape shape;
    shape.feature_dim = between(rng, 3, 6);
    shape.semantic_dim = between(rng, 2, 4);
    shape.side_dim = between(rng, 3, 5);
    shape.disc_hidden = between(rng, 3, 5);
    const std::size_t b = between(rng, 2, 4);

    in.table.text = normal(rng, kClasses, static_cast<Eigen::Index>(shape.side_dim) - 1);
    in.table.hier = normal(rng, kClasses, 1);
    in.table.fused.resize(kClasses, static_cast<Eigen::Index>(shape.side_dim));
    in.table.fused << in.table.text, in.table.hier;
    in.model = make_model(shape, in.table, {0, 1, 2}, rng());
    for (DenseNet* net : {&in.model.sketch_to_semantic, &in.model.image_to_semantic,
                          &in.model.semantic_to_sketch, &in.model.semantic_to_image,
                          &in.model.semantic_disc, &in.model.sketch_disc, &in.model.image_disc,
                          &in.model.classifier, &in.model.side_encoder, &in.model.side_decoder}) {
      randomize_biases(*net, rng);
    }

    const auto d = static_cast<Eigen::Index>(shape.feature_dim);
    in.batch.sketches = normal(rng, static_cast<Eigen::Index>(b), d);
    in.batch.images = normal(rng, static_cast<Eigen::Index>(b), d);
    Eigen::MatrixXd raw_sk(static_cast<Eigen::Index>(b), in.table.fused.cols());
    Eigen::MatrixXd raw_im(static_cast<Eigen::Index>(b), in.table.fused.cols());
    for (std::size_t i = 0; i < b; ++i) {
      in.batch.sketch_labels.push_back(static_cast<std::uint32_t>(uniform_index(rng, kClasses)));
      in.batch.image_labels.push_back(static_cast<std::uint32_t>(uniform_index(rng, kClasses)));
      raw_sk.row(static_cast<Eigen::Index>(i)) = in.table.fused.row(in.batch.sketch_labels.back());
      raw_im.row(static_cast<Eigen::Index>(i)) = in.table.fused.row(in.batch.image_labels.back());
    }
    in.batch.sketch_side = in.model.scale_side(raw_sk);
    in.batch.image_side = in.model.scale_side(raw_im);
    if (kink_distance(in.model, in.batch) > margin) return in;
  }
  throw NumericError("gradient suite could not draw an instance away from kinks");
}

std::vector<Eigen::MatrixXd*> params_of(std::initializer_list<DenseNet*> nets) {
  std::vector<Eigen::MatrixXd*> out;
  for (DenseNet* net : nets) {
    for (Eigen::MatrixXd* p : net->parameters()) out.push_back(p);
  }
  return out;
}

template <typename... Lists>
std::vector<Eigen::MatrixXd> concat(Lists... lists) {
  std::vector<Eigen::MatrixXd> out;
  (out.insert(out.end(), lists.begin(), lists.end()), ...);
  return out;
}

void check_adversarial(Instance& in, AdversarialBranch branch, const std::string& name,
                       const GradientSuiteConfig& cfg, std::size_t index,
                       std::vector<GradientCheckRow>& rows) {
  SemPcycModel& m = in.model;
  const Eigen::MatrixXd enc_sk = m.encode_side(in.batch.sketch_side);
  const Eigen::MatrixXd enc_im = m.encode_side(in.batch.image_side);
  DenseNet* disc = nullptr;
  Eigen::MatrixXd real;
  std::vector<Eigen::MatrixXd> fakes;
  switch (branch) {
    case AdversarialBranch::kSemantic:
      disc = &m.semantic_disc;
      real.resize(enc_sk.rows() + enc_im.rows(), enc_sk.cols());
      real << enc_sk, enc_im;
      fakes = {predict(m.sketch_to_semantic, in.batch.sketches),
               predict(m.image_to_semantic, in.batch.images)};
      break;
    case AdversarialBranch::kSketchFeature:
      disc = &m.sketch_disc;
      real = in.batch.sketches;
      fakes = {predict(m.semantic_to_sketch, enc_sk)};
      break;
    case AdversarialBranch::kImageFeature:
      disc = &m.image_disc;
      real = in.batch.images;
      fakes = {predict(m.semantic_to_image, enc_im)};
      break;
  }

  const auto at = adversarial_loss(branch, *disc, real, fakes);
  const auto d_params = disc->parameters();
  const auto d_report = check_gradients(
      d_params, at.disc_grads,
      [&] { return adversarial_loss(branch, *disc, real, fakes, {false, false}).d_loss; }, cfg.step);
  rows.push_back({name + "_disc", index, d_report.max_relative_error, d_report.entries_checked});

  std::vector<Eigen::MatrixXd*> fake_params;
  for (auto& f : fakes) fake_params.push_back(&f);
  const auto g_report = check_gradients(
      fake_params, at.fake_grads,
      [&] { return adversarial_loss(branch, *disc, real, fakes, {false, false}).g_loss; }, cfg.step);
  rows.push_back({name + "_fake", index, g_report.max_relative_error, g_report.entries_checked});
}

void check_instance(Instance& in, const GradientSuiteConfig& cfg, std::size_t index,
                    std::vector<GradientCheckRow>& rows) {
  SemPcycModel& m = in.model;
  const TrainingBatch& b = in.batch;

  check_adversarial(in, AdversarialBranch::kSemantic, "adversarial_semantic", cfg, index, rows);
  check_adversarial(in, AdversarialBranch::kSketchFeature, "adversarial_sketch", cfg, index, rows);
  check_adversarial(in, AdversarialBranch::kImageFeature, "adversarial_image", cfg, index, rows);

  {
    Eigen::MatrixXd s = m.encode_side(b.sketch_side);
    const auto at = cycle_consistency_loss(b.sketches, s, m.sketch_to_semantic, m.semantic_to_sketch);
    auto params = params_of({&m.sketch_to_semantic, &m.semantic_to_sketch});
    params.push_back(&s);
    const auto analytic = concat(at.to_semantic_grads, at.from_semantic_grads,
                                 std::vector<Eigen::MatrixXd>{at.side_grad});
    const auto r = check_gradients(params, analytic, [&] {
      return cycle_consistency_loss(b.sketches, s, m.sketch_to_semantic, m.semantic_to_sketch).value;
    }, cfg.step);
    rows.push_back({"cycle", index, r.max_relative_error, r.entries_checked});
  }

  {
    Eigen::MatrixXd sem = predict(m.image_to_semantic, b.images);
    const auto at = classification_loss(sem, b.image_labels, m);
    auto params = params_of({&m.classifier});
    params.push_back(&sem);
    const auto analytic = concat(at.classifier_grads, std::vector<Eigen::MatrixXd>{at.semantic_grad});
    const auto r = check_gradients(
        params, analytic, [&] { return classification_loss(sem, b.image_labels, m).value; }, cfg.step);
    rows.push_back({"classification", index, r.max_relative_error, r.entries_checked});
  }

  {
    constexpr double kL21 = 0.5;
    Eigen::MatrixXd side(b.sketch_side.rows() + b.image_side.rows(), b.sketch_side.cols());
    side << b.sketch_side, b.image_side;
    const auto at = autoencoder_loss(side, m.side_encoder, m.side_decoder, kL21);
    const auto params = params_of({&m.side_encoder, &m.side_decoder});
    const auto r = check_gradients(params, concat(at.encoder_grads, at.decoder_grads), [&] {
      return autoencoder_loss(side, m.side_encoder, m.side_decoder, kL21).value;
    }, cfg.step);
    rows.push_back({"autoencoder", index, r.max_relative_error, r.entries_checked});
  }

  const LossWeights weights;
  {
    const auto at = generator_step_gradients(m, b, weights);
    const auto params = generator_parameters(m);
    const auto r = check_gradients(
        params, at.grads, [&] { return generator_step_gradients(m, b, weights).total; }, cfg.step);
    rows.push_back({"generator_step", index, r.max_relative_error, r.entries_checked});
  }
  {
    const auto at = discriminator_step_gradients(m, b, weights);
    const auto params = discriminator_parameters(m);
    const auto r = check_gradients(params, at.grads, [&] {
      const auto d = discriminator_step_gradients(m, b, weights);
      return weights.adv_se * d.d_loss_se + weights.adv_sk * d.d_loss_sk +
             weights.adv_im * d.d_loss_im;
    }, cfg.step);
    rows.push_back({"discriminator_step", index, r.max_relative_error, r.entries_checked});
  }
}

}  // namespace

std::vector<GradientCheckRow> run_gradient_suite(const GradientSuiteConfig& config) {
  if (config.instances == 0) throw ConfigError("gradient suite needs at least one instance");
  std::vector<GradientCheckRow> rows;
  Rng rng = make_rng(config.seed, 0x67c4);
  for (std::size_t i = 0; i < config.instances; ++i) {
    Instance in = draw_instance(rng, config.kink_margin);
    check_instance(in, config, i, rows);
  }
  return rows;
}

double max_error(const std::vector<GradientCheckRow>& rows) {
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, r.max_relative_error);
  return worst;
}

}  // namespace anyshot
