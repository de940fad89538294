#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "anyshot/errors.hpp"
#include "anyshot/sem_pcyc.hpp"
#include "test_util.hpp"

namespace anyshot {
namespace {

using testing::TempDir;

ClassEmbeddingTable small_side(Eigen::Index classes, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd text(classes, 3), hier(classes, 2);
  for (Eigen::Index i = 0; i < text.size(); ++i) text.data()[i] = u(gen);
  for (Eigen::Index i = 0; i < hier.size(); ++i) hier.data()[i] = u(gen);
  return fuse_side_info(text, hier);
}

ModelShape small_shape() {
  ModelShape s;
  s.feature_dim = 6;
  s.semantic_dim = 4;
  s.disc_hidden = 5;
  return s;
}

DenseNet single_layer(Eigen::MatrixXd w, Activation act) {
  DenseLayer l;
  l.bias = Eigen::MatrixXd::Zero(1, w.cols());
  l.weight = std::move(w);
  l.activation = act;
  return DenseNet({l});
}

// D(x) = 0.5 for every input.
DenseNet half_discriminator(Eigen::Index in) {
  DenseLayer hidden{Eigen::MatrixXd::Zero(in, 3), Eigen::MatrixXd::Zero(1, 3), Activation::kLeakyRelu};
  DenseLayer out{Eigen::MatrixXd::Zero(3, 1), Eigen::MatrixXd::Zero(1, 1), Activation::kSigmoid};
  return DenseNet({hidden, out});
}

// D(x) = sigmoid(scale * x_0): confident in the sign of the first coordinate.
DenseNet sign_discriminator(Eigen::Index in, double scale) {
  DenseLayer hidden{Eigen::MatrixXd::Zero(in, 1), Eigen::MatrixXd::Zero(1, 1), Activation::kIdentity};
  hidden.weight(0, 0) = 1.0;
  DenseLayer out{Eigen::MatrixXd::Constant(1, 1, scale), Eigen::MatrixXd::Zero(1, 1), Activation::kSigmoid};
  return DenseNet({hidden, out});
}

TEST(L21, RowNormSum) {
  const L21Result r = l21_norm((Eigen::MatrixXd(2, 2) << 3, 4, 0, 0).finished());
  EXPECT_DOUBLE_EQ(r.value, 5.0);
  EXPECT_DOUBLE_EQ(r.subgradient(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(r.subgradient(0, 1), 0.8);
  EXPECT_TRUE(r.subgradient.row(1).isZero());
}

TEST(Autoencoder, ConstantReconstructionExamples) {
  // f and g output sigmoid(0) = 0.5 everywhere; s = 0 gives ||0.5 * 1_4|| = 1.
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(4, 2);
  const DenseNet enc = single_layer(w1, Activation::kSigmoid);
  const DenseNet dec = single_layer(Eigen::MatrixXd::Zero(2, 4), Activation::kSigmoid);
  const Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 4);
  const AutoencoderLoss a = autoencoder_loss(s, enc, dec, 0.0);
  EXPECT_DOUBLE_EQ(a.reconstruction, 1.0);
  EXPECT_DOUBLE_EQ(a.value, 1.0);

  w1(1, 0) = 3.0;
  w1(1, 1) = 4.0;
  const AutoencoderLoss b = autoencoder_loss(s, single_layer(w1, Activation::kSigmoid), dec, 0.8);
  EXPECT_DOUBLE_EQ(b.reconstruction, 1.0);
  EXPECT_DOUBLE_EQ(b.value, 5.0);
  EXPECT_NEAR(b.encoder_grads[0](1, 0), 0.8 * 0.6, 1e-15);
}

TEST(Adversarial, HalfDiscriminatorObjectives) {
  const DenseNet d = half_discriminator(3);
  const Eigen::MatrixXd real = Eigen::MatrixXd::Random(4, 3);
  const Eigen::MatrixXd fakes[] = {Eigen::MatrixXd::Random(5, 3), Eigen::MatrixXd::Random(2, 3)};
  const AdversarialLoss se = adversarial_loss(AdversarialBranch::kSemantic, d, real, fakes);
  EXPECT_NEAR(se.objective, 4.0 * std::log(0.5), 1e-15);
  EXPECT_NEAR(se.d_loss, -4.0 * std::log(0.5), 1e-15);
  EXPECT_NEAR(se.g_loss, -2.0 * std::log(0.5), 1e-15);
  const AdversarialLoss sk =
      adversarial_loss(AdversarialBranch::kSketchFeature, d, real, std::span(fakes, 1));
  EXPECT_NEAR(sk.objective, 2.0 * std::log(0.5), 1e-15);
  EXPECT_THROW(adversarial_loss(AdversarialBranch::kImageFeature, d, real, fakes), ContractError);
}

TEST(Adversarial, PerfectDiscriminatorReachesZero) {
  const DenseNet d = sign_discriminator(2, 1e4);
  const Eigen::MatrixXd real = Eigen::MatrixXd::Constant(3, 2, 1.0);
  const Eigen::MatrixXd fake = Eigen::MatrixXd::Constant(3, 2, -1.0);
  const AdversarialLoss l =
      adversarial_loss(AdversarialBranch::kImageFeature, d, real, std::span(&fake, 1));
  EXPECT_NEAR(l.objective, 0.0, 1e-6);
  EXPECT_LE(l.objective, 0.0);
  // Saturated probabilities sit on the clamp and contribute no gradient.
  for (const auto& g : l.disc_grads) EXPECT_TRUE(g.isZero());
}

TEST(Adversarial, ObjectiveMatchesProbabilityFormulaAndIsBounded) {
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd real(4), f1(3), f2(5);
    for (auto* v : {&real, &f1, &f2}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = u(gen);
    }
    if (trial % 10 == 0) real(0) = 0.0;
    const Eigen::VectorXd fakes[] = {f1, f2};
    const double value = adversarial_objective(AdversarialBranch::kSemantic, real, fakes);
    auto mean_log = [](const Eigen::VectorXd& v, bool complement) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double p = std::min(std::max(v(i), 1e-7), 1.0 - 1e-7);
        s += std::log(complement ? 1.0 - p : p);
      }
      return s / static_cast<double>(v.size());
    };
    const double expected = 2.0 * mean_log(real, false) + mean_log(f1, true) + mean_log(f2, true);
    EXPECT_NEAR(value, expected, 1e-12);
    EXPECT_LE(value, 0.0);
    EXPECT_TRUE(std::isfinite(value));
  }
}

TEST(Cycle, HandComputedExample) {
  // G = ReLU(I x), F = I x.
  const DenseNet g = single_layer(Eigen::MatrixXd::Identity(2, 2), Activation::kRelu);
  const DenseNet f = single_layer(Eigen::MatrixXd::Identity(2, 2), Activation::kIdentity);
  const Eigen::MatrixXd x = (Eigen::MatrixXd(1, 2) << 1.0, -1.0).finished();
  const Eigen::MatrixXd s = (Eigen::MatrixXd(1, 2) << 1.0, -2.0).finished();
  const CycleLoss c = cycle_consistency_loss(x, s, g, f);
  EXPECT_DOUBLE_EQ(c.feature_term, 0.5);
  EXPECT_DOUBLE_EQ(c.semantic_term, 1.0);
  EXPECT_DOUBLE_EQ(c.value, 1.5);
}

TEST(Cycle, ExactInverseGivesZero) {
  const DenseNet g = single_layer(2.0 * Eigen::MatrixXd::Identity(3, 3), Activation::kRelu);
  const DenseNet f = single_layer(0.5 * Eigen::MatrixXd::Identity(3, 3), Activation::kIdentity);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3).cwiseAbs();
  const CycleLoss c = cycle_consistency_loss(x, 2.0 * x, g, f);
  EXPECT_DOUBLE_EQ(c.value, 0.0);
  EXPECT_THROW(cycle_consistency_loss(x, Eigen::MatrixXd::Zero(3, 3), g, f), ShapeError);
}

TEST(Classification, UniformLogitsGiveLogClassCount) {
  SemPcycModel m = make_model(small_shape(), small_side(100, 1),
                              [] {
                                std::vector<std::uint32_t> all(100);
                                for (std::uint32_t i = 0; i < 100; ++i) all[i] = i;
                                return all;
                              }(),
                              4);
  m.classifier.mutable_layer(0).weight.setZero();
  const std::uint32_t labels[] = {0, 57};
  const ClassificationLoss l = classification_loss(Eigen::MatrixXd::Random(2, 4), labels, m);
  EXPECT_NEAR(l.value, std::log(100.0), 1e-12);
}

TEST(Classification, TwoClassExampleAndUncoveredLabel) {
  SemPcycModel m = make_model(small_shape(), small_side(5, 2), {1, 3}, 4);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 2);
  w(0, 0) = 1.0;  // logit of class 1 = x_0, class 3 stays 0
  m.classifier.mutable_layer(0).weight = w;
  const Eigen::MatrixXd x = (Eigen::MatrixXd(1, 4) << 1.0, 0.0, 0.0, 0.0).finished();
  const std::uint32_t label[] = {1};
  EXPECT_NEAR(classification_loss(x, label, m).value, std::log1p(std::exp(-1.0)), 1e-15);
  const std::uint32_t missing[] = {2};
  EXPECT_THROW(classification_loss(x, missing, m), ContractError);
}

TEST(TotalObjective, WeightedSum) {
  LossComponents ones{1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_NEAR(total_objective(ones, LossWeights{}), 6.01, 1e-15);
  EXPECT_DOUBLE_EQ(total_objective(LossComponents{}, LossWeights{}), 0.0);
  LossWeights w{};
  w.adv_se = -1.0;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(Model, DefaultShapeAndEncode) {
  const ClassEmbeddingTable side = small_side(4, 3);
  SemPcycModel m = make_model(ModelShape{}, side, {0, 1, 2}, 1);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(7, 512);
  EXPECT_EQ(encode(m, x, Modality::kSketch).cols(), 64);
  EXPECT_GE(encode(m, x, Modality::kImage).minCoeff(), 0.0);
  m.sketch_to_semantic.mutable_layer(0).weight.setZero();
  EXPECT_TRUE(encode(m, x, Modality::kSketch).isZero());
  EXPECT_EQ(m.side_encoder.layer(0).weight.rows(), 5);
  EXPECT_EQ(m.side_encoder.layer(0).weight.cols(), 64);
}

TEST(Model, ScalerFittedOnTrainingClassesAndClamped) {
  const ClassEmbeddingTable side = small_side(6, 4);
  const SemPcycModel m = make_model(small_shape(), side, {0, 2, 4}, 1);
  const Eigen::MatrixXd scaled = m.scale_side(side.fused);
  EXPECT_GE(scaled.minCoeff(), 0.0);
  EXPECT_LE(scaled.maxCoeff(), 1.0);
  for (Eigen::Index j = 0; j < scaled.cols(); ++j) {
    const Eigen::Vector3d seen(scaled(0, j), scaled(2, j), scaled(4, j));
    EXPECT_NEAR(seen.minCoeff(), 0.0, 1e-6);
    EXPECT_NEAR(seen.maxCoeff(), 1.0, 1e-6);
  }
  EXPECT_THROW(m.scale_side(Eigen::MatrixXd::Zero(1, 3)), ShapeError);
}

TEST(Model, WithoutEncoderSemanticTargetIsScaledSide) {
  ModelShape shape = small_shape();
  shape.use_side_encoder = false;
  const ClassEmbeddingTable side = small_side(3, 5);
  const SemPcycModel m = make_model(shape, side, {0, 1, 2}, 1);
  EXPECT_EQ(m.shape.semantic_dim, 5u);
  const Eigen::MatrixXd s = m.scale_side(side.fused);
  EXPECT_EQ(m.encode_side(s), s);
  EXPECT_THROW(autoencoder_loss(s, m, 0.1), ContractError);
}

TEST(Model, ExtendClassifierAppendsZeroColumns) {
  SemPcycModel m = make_model(small_shape(), small_side(6, 6), {0, 1}, 2);
  const Eigen::MatrixXd before = m.classifier.layer(0).weight;
  const std::uint32_t extra[] = {5, 1, 3, 5};
  extend_classifier(m, extra);
  EXPECT_EQ(m.classifier_classes, (std::vector<std::uint32_t>{0, 1, 3, 5}));
  EXPECT_EQ(m.classifier.layer(0).weight.leftCols(2), before);
  EXPECT_TRUE(m.classifier.layer(0).weight.rightCols(2).isZero());
  EXPECT_EQ(*m.classifier_column(5), 3u);
}

TEST(Model, CheckpointRoundTripIsExact) {
  TempDir dir;
  const SemPcycModel m = make_model(small_shape(), small_side(4, 7), {0, 3}, 9);
  m.save(dir / "m.spck");
  const SemPcycModel back = SemPcycModel::load(dir / "m.spck");
  EXPECT_TRUE(back == m);
  const std::string once = testing::read_bytes(dir / "m.spck");
  back.save(dir / "again.spck");
  EXPECT_EQ(testing::read_bytes(dir / "again.spck"), once);
}

TEST(Model, DifferentSeedsDiffer) {
  const ClassEmbeddingTable side = small_side(4, 7);
  EXPECT_TRUE(make_model(small_shape(), side, {0}, 1) == make_model(small_shape(), side, {0}, 1));
  EXPECT_FALSE(make_model(small_shape(), side, {0}, 1) == make_model(small_shape(), side, {0}, 2));
}

}  // namespace
}  // namespace anyshot
