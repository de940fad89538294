#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "anyshot/checkpoint.hpp"
#include "anyshot/feature_store.hpp"
#include "anyshot/neural.hpp"
#include "anyshot/side_info.hpp"

namespace anyshot {

// Weights of the combined objective. l21 is the row-sparsity weight inside
// the auto-encoder term.
struct LossWeights {
  double adv_se = 1.0;
  double adv_sk = 0.5;
  double adv_im = 0.5;
  double cyc_sk = 1.0;
  double cyc_im = 1.0;
  double cls_sk = 1.0;
  double cls_im = 1.0;
  double aenc = 0.01;
  double l21 = 0.01;

  void validate() const;
};

// Values of the individual terms entering the combined objective.
struct LossComponents {
  double adv_se = 0.0;
  double adv_sk = 0.0;
  double adv_im = 0.0;
  double cyc_sk = 0.0;
  double cyc_im = 0.0;
  double cls_sk = 0.0;
  double cls_im = 0.0;
  double aenc = 0.0;
};

double total_objective(const LossComponents& c, const LossWeights& w);

struct ModelShape {
  std::size_t feature_dim = 512;
  std::size_t semantic_dim = 64;
  std::size_t side_dim = 0;
  std::size_t disc_hidden = 256;
  // Without the encoder the scaled side information itself is the semantic
  // target and semantic_dim equals side_dim.
  bool use_side_encoder = true;
};

// Every trainable part of the paired cycle-consistent model.
struct SemPcycModel {
  ModelShape shape;
  DenseNet sketch_to_semantic;   // G_sk: d -> M, ReLU
  DenseNet image_to_semantic;    // G_im
  DenseNet semantic_to_sketch;   // F_sk: M -> d, identity
  DenseNet semantic_to_image;    // F_im
  DenseNet semantic_disc;        // D_se: M -> hidden -> 1
  DenseNet sketch_disc;          // D_sk: d -> hidden -> 1
  DenseNet image_disc;           // D_im
  DenseNet classifier;           // theta: M -> |classes|, linear
  std::vector<std::uint32_t> classifier_classes;  // output column -> class index
  DenseNet side_encoder;         // f: k -> M, sigmoid (W1 = layer 0 weight, k x M)
  DenseNet side_decoder;         // g: M -> k, sigmoid
  Eigen::RowVectorXd side_min;   // per-dimension min-max scaler
  Eigen::RowVectorXd side_max;
  std::uint64_t seed = 0;

  // Column of the classifier for a class, if the classifier covers it.
  std::optional<std::size_t> classifier_column(std::uint32_t class_index) const;

  // Min-max scaling to [0, 1] with the stored scaler; values outside the
  // fitted range are clamped, constant dimensions map to 0.
  Eigen::MatrixXd scale_side(const Eigen::MatrixXd& raw) const;

  // Semantic target for already-scaled side information: f(s), or s itself
  // when the encoder is disabled.
  Eigen::MatrixXd encode_side(const Eigen::MatrixXd& scaled) const;

  TensorArchive to_archive() const;
  static SemPcycModel from_archive(const TensorArchive& archive);
  void save(const std::filesystem::path& path) const;
  static SemPcycModel load(const std::filesystem::path& path);

  friend bool operator==(const SemPcycModel& a, const SemPcycModel& b);
};

// Fresh model; the scaler is fitted on the side-information rows of
// `classifier_classes` (the training classes).
SemPcycModel make_model(const ModelShape& shape, const ClassEmbeddingTable& side,
                        std::vector<std::uint32_t> classifier_classes, std::uint64_t seed);

// Appends zero-initialized classifier columns for classes it does not cover.
void extend_classifier(SemPcycModel& model, std::span<const std::uint32_t> classes);

// G_sk(batch) or G_im(batch).
Eigen::MatrixXd encode(const SemPcycModel& model, const Eigen::MatrixXd& batch, Modality modality);
Eigen::MatrixXd encode(const SemPcycModel& model, const FeatureSet& features);

// ---------------------------------------------------------------------------
// Loss terms. Each returns its value and the gradients the trainer needs.

struct L21Result {
  double value = 0.0;
  Eigen::MatrixXd subgradient;  // row_i / ||row_i||, zero for rows below 1e-12
};

L21Result l21_norm(const Eigen::MatrixXd& w);

struct AutoencoderLoss {
  double value = 0.0;           // reconstruction + lambda * l21
  double reconstruction = 0.0;  // mean_i ||s_i - g(f(s_i))||_2
  std::vector<Eigen::MatrixXd> encoder_grads;
  std::vector<Eigen::MatrixXd> decoder_grads;
};

AutoencoderLoss autoencoder_loss(const Eigen::MatrixXd& side_batch, const DenseNet& encoder,
                                 const DenseNet& decoder, double lambda_l21);
AutoencoderLoss autoencoder_loss(const Eigen::MatrixXd& side_batch, const SemPcycModel& model,
                                 double lambda_l21);

enum class AdversarialBranch { kSemantic, kSketchFeature, kImageFeature };

inline constexpr double kProbabilityClamp = 1e-7;

// Objective value from discriminator probabilities. The semantic branch
// expects two fake sets and weighs the real term by 2.
double adversarial_objective(AdversarialBranch branch, const Eigen::VectorXd& p_real,
                             std::span<const Eigen::VectorXd> p_fakes);

struct AdversarialLoss {
  double objective = 0.0;  // maximized by the discriminator
  double d_loss = 0.0;     // -objective
  double g_loss = 0.0;     // non-saturating: -sum_j E[log D(fake_j)]
  std::vector<Eigen::MatrixXd> disc_grads;  // d d_loss / d discriminator
  std::vector<Eigen::MatrixXd> fake_grads;  // d g_loss / d fake_j
};

struct AdversarialNeeds {
  bool disc_grads = true;
  bool fake_grads = true;
};

AdversarialLoss adversarial_loss(AdversarialBranch branch, const DenseNet& disc,
                                 const Eigen::MatrixXd& real,
                                 std::span<const Eigen::MatrixXd> fakes,
                                 AdversarialNeeds needs = {});
AdversarialLoss adversarial_loss(AdversarialBranch branch, const Eigen::MatrixXd& real,
                                 std::span<const Eigen::MatrixXd> fakes, const SemPcycModel& model,
                                 AdversarialNeeds needs = {});

struct CycleLoss {
  double value = 0.0;
  double feature_term = 0.0;   // mean |F(G(x)) - x|
  double semantic_term = 0.0;  // mean |G(F(s)) - s|
  std::vector<Eigen::MatrixXd> to_semantic_grads;
  std::vector<Eigen::MatrixXd> from_semantic_grads;
  Eigen::MatrixXd side_grad;  // d value / d s
};

CycleLoss cycle_consistency_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& s,
                                 const DenseNet& to_semantic, const DenseNet& from_semantic);

struct ClassificationLoss {
  double value = 0.0;
  std::vector<Eigen::MatrixXd> classifier_grads;
  Eigen::MatrixXd semantic_grad;
};

// Softmax cross-entropy of the classifier on generator outputs. Throws
// ContractError for a label the classifier does not cover.
ClassificationLoss classification_loss(const Eigen::MatrixXd& semantic_batch,
                                       std::span<const std::uint32_t> labels,
                                       const SemPcycModel& model);

// ---------------------------------------------------------------------------
// One mini-batch, as seen by both update phases.
struct TrainingBatch {
  Eigen::MatrixXd sketches;
  Eigen::MatrixXd images;
  std::vector<std::uint32_t> sketch_labels;
  std::vector<std::uint32_t> image_labels;
  Eigen::MatrixXd sketch_side;  // scaled side information per sketch row
  Eigen::MatrixXd image_side;
};

struct DiscriminatorStepResult {
  double d_loss_se = 0.0;
  double d_loss_sk = 0.0;
  double d_loss_im = 0.0;
  // D_se, D_sk, D_im parameters, in that order.
  std::vector<Eigen::MatrixXd> grads;
};

struct GeneratorStepResult {
  LossComponents components;
  double total = 0.0;
  // G_sk, G_im, F_sk, F_im, classifier, f, g parameters, in that order.
  std::vector<Eigen::MatrixXd> grads;
};

DiscriminatorStepResult discriminator_step_gradients(const SemPcycModel& model,
                                                     const TrainingBatch& batch,
                                                     const LossWeights& weights);
GeneratorStepResult generator_step_gradients(const SemPcycModel& model, const TrainingBatch& batch,
                                             const LossWeights& weights);

std::vector<Eigen::MatrixXd*> discriminator_parameters(SemPcycModel& model);
std::vector<Eigen::MatrixXd*> generator_parameters(SemPcycModel& model);

// ---------------------------------------------------------------------------
// Training.

struct EpochTrace {
  std::size_t epoch = 0;
  LossComponents components;  // batch means
  double total = 0.0;
  double d_loss_se = 0.0;
  double d_loss_sk = 0.0;
  double d_loss_im = 0.0;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t semantic_dim = 64;
  std::size_t disc_hidden = 256;
  bool use_side_encoder = true;
  AdamConfig adam;
  // Called after every epoch; must not keep references past the call.
  std::function<void(const SemPcycModel&, const EpochTrace&)> on_epoch;
};

struct TrainResult {
  SemPcycModel model;
  std::vector<EpochTrace> trace;
};

// Alternating updates on episode.train_seen: one discriminator step on
// detached fakes, then one joint step of generators, classifier and
// auto-encoder. Throws NumericError naming the first non-finite term.
TrainResult train(const Episode& episode, const ClassEmbeddingTable& side,
                  const LossWeights& weights, const TrainConfig& config);

enum class Pairing { kCoarse, kFine };

struct FinetuneConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  double replay_fraction = 0.0;
  Pairing pairing = Pairing::kCoarse;
  std::uint64_t seed = 0;
  AdamConfig adam;
};

// Continues training from a zero-shot model on episode.aux_unseen. Coarse
// pairing uses every same-class sketch/image combination, fine pairing the
// instances sharing a pair id. The classifier gains columns for the
// auxiliary classes.
TrainResult few_shot_finetune(const SemPcycModel& model, const Episode& episode,
                              const ClassEmbeddingTable& side, const LossWeights& weights,
                              const FinetuneConfig& config);

struct PruneResult {
  std::vector<std::size_t> kept;     // ascending side-information columns
  std::vector<std::size_t> removed;  // ascending
  ClassEmbeddingTable table;
  SemPcycModel model;  // encoder rows, decoder columns and scaler reduced
};

// Drops the floor(ratio * k) side-information dimensions whose encoder
// weight rows have the smallest l2 norm (ties: lower index first).
PruneResult prune_side_info(const SemPcycModel& model, const ClassEmbeddingTable& table,
                            double ratio);

}  // namespace anyshot
