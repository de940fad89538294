#include <cmath>

#include "anyshot/errors.hpp"
#include "anyshot/sem_pcyc.hpp"

namespace anyshot {
namespace {

double clamp_probability(double p) {
  return std::min(std::max(p, kProbabilityClamp), 1.0 - kProbabilityClamp);
}

bool inside_clamp(double p) { return p > kProbabilityClamp && p < 1.0 - kProbabilityClamp; }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::size_t expected_fakes(AdversarialBranch branch) {
  return branch == AdversarialBranch::kSemantic ? 2 : 1;
}

double real_weight(AdversarialBranch branch) {
  return branch == AdversarialBranch::kSemantic ? 2.0 : 1.0;
}

const DenseNet& discriminator_of(const SemPcycModel& model, AdversarialBranch branch) {
  switch (branch) {
    case AdversarialBranch::kSemantic: return model.semantic_disc;
    case AdversarialBranch::kSketchFeature: return model.sketch_disc;
    case AdversarialBranch::kImageFeature: return model.image_disc;
  }
  throw ContractError("unknown adversarial branch");
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {adv_se, adv_sk, adv_im, cyc_sk, cyc_im, cls_sk, cls_im, aenc, l21}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

double total_objective(const LossComponents& c, const LossWeights& w) {
  return w.adv_se * c.adv_se + w.adv_sk * c.adv_sk + w.adv_im * c.adv_im + w.cyc_sk * c.cyc_sk +
         w.cyc_im * c.cyc_im + w.cls_sk * c.cls_sk + w.cls_im * c.cls_im + w.aenc * c.aenc;
}

L21Result l21_norm(const Eigen::MatrixXd& w) {
  if (!w.allFinite()) throw NumericError("l21 norm of a non-finite matrix");
  L21Result out;
  out.subgradient = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double n = w.row(i).norm();
    out.value += n;
    if (n >= 1e-12) out.subgradient.row(i) = w.row(i) / n;
  }
  return out;
}

AutoencoderLoss autoencoder_loss(const Eigen::MatrixXd& side_batch, const DenseNet& encoder,
                                 const DenseNet& decoder, double lambda_l21) {
  if (static_cast<std::size_t>(side_batch.cols()) != encoder.input_dim() ||
      decoder.output_dim() != encoder.input_dim()) {
    throw ShapeError("side-information width does not match the auto-encoder");
  }
  if (side_batch.rows() == 0) throw ShapeError("empty side-information batch");
  const auto code = forward(encoder, side_batch);
  const auto recon = forward(decoder, code.output);

  const double batch = static_cast<double>(side_batch.rows());
  Eigen::MatrixXd diff = recon.output - side_batch;
  AutoencoderLoss out;
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    const double n = diff.row(i).norm();
    out.reconstruction += n;
    if (n >= 1e-12) diff.row(i) /= n * batch;
    else diff.row(i).setZero();
  }
  out.reconstruction /= batch;

  auto dec = backward(decoder, recon.cache, diff);
  auto enc = backward(encoder, code.cache, dec.input);
  const L21Result l21 = l21_norm(encoder.layer(0).weight);
  enc.params[0] += lambda_l21 * l21.subgradient;
  out.value = out.reconstruction + lambda_l21 * l21.value;
  out.encoder_grads = std::move(enc.params);
  out.decoder_grads = std::move(dec.params);
  return out;
}

AutoencoderLoss autoencoder_loss(const Eigen::MatrixXd& side_batch, const SemPcycModel& model,
                                 double lambda_l21) {
  if (!model.shape.use_side_encoder) throw ContractError("model has no side-information encoder");
  return autoencoder_loss(side_batch, model.side_encoder, model.side_decoder, lambda_l21);
}

double adversarial_objective(AdversarialBranch branch, const Eigen::VectorXd& p_real,
                             std::span<const Eigen::VectorXd> p_fakes) {
  if (p_fakes.size() != expected_fakes(branch)) throw ContractError("wrong number of fake batches");
  if (p_real.size() == 0) throw ShapeError("empty real batch");
  double value = real_weight(branch) * p_real.unaryExpr([](double p) {
    return std::log(clamp_probability(p));
  }).mean();
  for (const auto& p : p_fakes) {
    if (p.size() == 0) throw ShapeError("empty fake batch");
    value += p.unaryExpr([](double q) { return std::log(1.0 - clamp_probability(q)); }).mean();
  }
  return value;
}

AdversarialLoss adversarial_loss(AdversarialBranch branch, const DenseNet& disc,
                                 const Eigen::MatrixXd& real,
                                 std::span<const Eigen::MatrixXd> fakes, AdversarialNeeds needs) {
  if (fakes.size() != expected_fakes(branch)) throw ContractError("wrong number of fake batches");
  if (real.rows() == 0) throw ShapeError("empty real batch");

  AdversarialLoss out;
  const auto real_fwd = forward(disc, real);
  const Eigen::VectorXd p_real = real_fwd.output.col(0);
  const double n_real = static_cast<double>(real.rows());
  const double a = real_weight(branch);
  out.objective = a * p_real.unaryExpr([](double p) { return std::log(clamp_probability(p)); }).mean();

  if (needs.disc_grads) {
    // d(-objective)/dp for the real rows.
    Eigen::MatrixXd up = p_real.unaryExpr([&](double p) {
      return inside_clamp(p) ? -a / (n_real * p) : 0.0;
    });
    out.disc_grads = backward(disc, real_fwd.cache, up).params;
  }

  for (const auto& fake : fakes) {
    if (fake.rows() == 0) throw ShapeError("empty fake batch");
    const auto fwd = forward(disc, fake);
    const Eigen::VectorXd p = fwd.output.col(0);
    const double n = static_cast<double>(fake.rows());
    out.objective += p.unaryExpr([](double q) { return std::log(1.0 - clamp_probability(q)); }).mean();
    out.g_loss -= p.unaryExpr([](double q) { return std::log(clamp_probability(q)); }).mean();
    if (needs.disc_grads) {
      Eigen::MatrixXd up = p.unaryExpr([&](double q) {
        return inside_clamp(q) ? 1.0 / (n * (1.0 - q)) : 0.0;
      });
      accumulate(out.disc_grads, backward(disc, fwd.cache, up).params);
    }
    if (needs.fake_grads) {
      Eigen::MatrixXd up = p.unaryExpr([&](double q) { return inside_clamp(q) ? -1.0 / (n * q) : 0.0; });
      out.fake_grads.push_back(backward(disc, fwd.cache, up).input);
    }
  }
  out.d_loss = -out.objective;
  return out;
}

AdversarialLoss adversarial_loss(AdversarialBranch branch, const Eigen::MatrixXd& real,
                                 std::span<const Eigen::MatrixXd> fakes, const SemPcycModel& model,
                                 AdversarialNeeds needs) {
  return adversarial_loss(branch, discriminator_of(model, branch), real, fakes, needs);
}

CycleLoss cycle_consistency_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& s,
                                 const DenseNet& to_semantic, const DenseNet& from_semantic) {
  if (x.rows() != s.rows()) throw ShapeError("cycle loss: feature and side batches differ in size");
  if (x.rows() == 0) throw ShapeError("cycle loss: empty batch");
  if (static_cast<std::size_t>(s.cols()) != from_semantic.input_dim()) {
    throw ShapeError("cycle loss: side width does not match the semantic space");
  }
  const double batch = static_cast<double>(x.rows());
  CycleLoss out;

  // x -> G -> F -> x
  const auto sem = forward(to_semantic, x);
  const auto back = forward(from_semantic, sem.output);
  const Eigen::MatrixXd dx = back.output - x;
  out.feature_term = dx.cwiseAbs().sum() / (batch * static_cast<double>(x.cols()));
  Eigen::MatrixXd up = dx.unaryExpr(&sign) / (batch * static_cast<double>(x.cols()));
  auto f1 = backward(from_semantic, back.cache, up);
  auto g1 = backward(to_semantic, sem.cache, f1.input);

  // s -> F -> G -> s
  const auto feat = forward(from_semantic, s);
  const auto resem = forward(to_semantic, feat.output);
  const Eigen::MatrixXd ds = resem.output - s;
  out.semantic_term = ds.cwiseAbs().sum() / (batch * static_cast<double>(s.cols()));
  const Eigen::MatrixXd up2 = ds.unaryExpr(&sign) / (batch * static_cast<double>(s.cols()));
  auto g2 = backward(to_semantic, resem.cache, up2);
  auto f2 = backward(from_semantic, feat.cache, g2.input);

  accumulate(g1.params, g2.params);
  accumulate(f1.params, f2.params);
  out.value = out.feature_term + out.semantic_term;
  out.to_semantic_grads = std::move(g1.params);
  out.from_semantic_grads = std::move(f1.params);
  out.side_grad = f2.input - up2;
  return out;
}

ClassificationLoss classification_loss(const Eigen::MatrixXd& semantic_batch,
                                       std::span<const std::uint32_t> labels,
                                       const SemPcycModel& model) {
  std::vector<std::size_t> targets;
  targets.reserve(labels.size());
  for (std::uint32_t label : labels) {
    const auto col = model.classifier_column(label);
    if (!col) {
      throw ContractError("class " + std::to_string(label) + " is not covered by the classifier");
    }
    targets.push_back(*col);
  }
  const auto fwd = forward(model.classifier, semantic_batch);
  const LossAndGrad ce = softmax_cross_entropy(fwd.output, targets);
  auto grads = backward(model.classifier, fwd.cache, ce.grad);
  ClassificationLoss out;
  out.value = ce.loss;
  out.classifier_grads = std::move(grads.params);
  out.semantic_grad = std::move(grads.input);
  return out;
}

DiscriminatorStepResult discriminator_step_gradients(const SemPcycModel& model,
                                                     const TrainingBatch& batch,
                                                     const LossWeights& weights) {
  DiscriminatorStepResult out;
  const Eigen::MatrixXd enc_sk = model.encode_side(batch.sketch_side);
  const Eigen::MatrixXd enc_im = model.encode_side(batch.image_side);
  const AdversarialNeeds needs{true, false};

  auto scaled = [](std::vector<Eigen::MatrixXd> g, double w) {
    for (auto& m : g) m *= w;
    return g;
  };
  auto append = [&](std::vector<Eigen::MatrixXd> g) {
    for (auto& m : g) out.grads.push_back(std::move(m));
  };

  if (weights.adv_se > 0.0) {
    Eigen::MatrixXd real(enc_sk.rows() + enc_im.rows(), enc_sk.cols());
    real << enc_sk, enc_im;
    const Eigen::MatrixXd fakes[2] = {predict(model.sketch_to_semantic, batch.sketches),
                                      predict(model.image_to_semantic, batch.images)};
    auto adv = adversarial_loss(AdversarialBranch::kSemantic, model.semantic_disc, real, fakes, needs);
    out.d_loss_se = adv.d_loss;
    append(scaled(std::move(adv.disc_grads), weights.adv_se));
  } else {
    append(zero_gradients(model.semantic_disc));
  }

  if (weights.adv_sk > 0.0) {
    const Eigen::MatrixXd fake[1] = {predict(model.semantic_to_sketch, enc_sk)};
    auto adv = adversarial_loss(AdversarialBranch::kSketchFeature, model.sketch_disc, batch.sketches,
                                fake, needs);
    out.d_loss_sk = adv.d_loss;
    append(scaled(std::move(adv.disc_grads), weights.adv_sk));
  } else {
    append(zero_gradients(model.sketch_disc));
  }

  if (weights.adv_im > 0.0) {
    const Eigen::MatrixXd fake[1] = {predict(model.semantic_to_image, enc_im)};
    auto adv = adversarial_loss(AdversarialBranch::kImageFeature, model.image_disc, batch.images,
                                fake, needs);
    out.d_loss_im = adv.d_loss;
    append(scaled(std::move(adv.disc_grads), weights.adv_im));
  } else {
    append(zero_gradients(model.image_disc));
  }
  return out;
}

GeneratorStepResult generator_step_gradients(const SemPcycModel& model, const TrainingBatch& batch,
                                             const LossWeights& weights) {
  if (batch.sketches.rows() == 0 || batch.images.rows() == 0) throw ShapeError("empty training batch");
  GeneratorStepResult out;
  LossComponents& c = out.components;

  // f(s) feeds F and the cycle target, so those terms reach the encoder too.
  const bool has_encoder = model.shape.use_side_encoder;
  ForwardResult enc_fwd_sk, enc_fwd_im;
  if (has_encoder) {
    enc_fwd_sk = forward(model.side_encoder, batch.sketch_side);
    enc_fwd_im = forward(model.side_encoder, batch.image_side);
  }
  const Eigen::MatrixXd& enc_sk = has_encoder ? enc_fwd_sk.output : batch.sketch_side;
  const Eigen::MatrixXd& enc_im = has_encoder ? enc_fwd_im.output : batch.image_side;
  Eigen::MatrixXd up_enc_sk = Eigen::MatrixXd::Zero(enc_sk.rows(), enc_sk.cols());
  Eigen::MatrixXd up_enc_im = Eigen::MatrixXd::Zero(enc_im.rows(), enc_im.cols());

  auto g_sk = zero_gradients(model.sketch_to_semantic);
  auto g_im = zero_gradients(model.image_to_semantic);
  auto f_sk = zero_gradients(model.semantic_to_sketch);
  auto f_im = zero_gradients(model.semantic_to_image);
  auto theta = zero_gradients(model.classifier);
  std::vector<Eigen::MatrixXd> enc, dec;
  if (has_encoder) {
    enc = zero_gradients(model.side_encoder);
    dec = zero_gradients(model.side_decoder);
  }

  auto add_scaled = [](std::vector<Eigen::MatrixXd>& into, const std::vector<Eigen::MatrixXd>& from,
                       double w) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += w * from[i];
  };

  const auto sem_sk = forward(model.sketch_to_semantic, batch.sketches);
  const auto sem_im = forward(model.image_to_semantic, batch.images);
  Eigen::MatrixXd up_sk = Eigen::MatrixXd::Zero(sem_sk.output.rows(), sem_sk.output.cols());
  Eigen::MatrixXd up_im = Eigen::MatrixXd::Zero(sem_im.output.rows(), sem_im.output.cols());

  if (weights.adv_se > 0.0) {
    Eigen::MatrixXd real(enc_sk.rows() + enc_im.rows(), enc_sk.cols());
    real << enc_sk, enc_im;
    const Eigen::MatrixXd fakes[2] = {sem_sk.output, sem_im.output};
    const auto adv = adversarial_loss(AdversarialBranch::kSemantic, model.semantic_disc, real, fakes,
                                      {false, true});
    c.adv_se = adv.g_loss;
    up_sk += weights.adv_se * adv.fake_grads[0];
    up_im += weights.adv_se * adv.fake_grads[1];
  }
  if (weights.cls_sk > 0.0) {
    const auto cls = classification_loss(sem_sk.output, batch.sketch_labels, model);
    c.cls_sk = cls.value;
    up_sk += weights.cls_sk * cls.semantic_grad;
    add_scaled(theta, cls.classifier_grads, weights.cls_sk);
  }
  if (weights.cls_im > 0.0) {
    const auto cls = classification_loss(sem_im.output, batch.image_labels, model);
    c.cls_im = cls.value;
    up_im += weights.cls_im * cls.semantic_grad;
    add_scaled(theta, cls.classifier_grads, weights.cls_im);
  }
  accumulate(g_sk, backward(model.sketch_to_semantic, sem_sk.cache, up_sk).params);
  accumulate(g_im, backward(model.image_to_semantic, sem_im.cache, up_im).params);

  auto feature_adversarial = [&](AdversarialBranch branch, const DenseNet& gen, const DenseNet& disc,
                                 const Eigen::MatrixXd& real, const Eigen::MatrixXd& side, double w,
                                 std::vector<Eigen::MatrixXd>& gen_grads, Eigen::MatrixXd& side_up) {
    const auto fake = forward(gen, side);
    const Eigen::MatrixXd fakes[1] = {fake.output};
    const auto adv = adversarial_loss(branch, disc, real, fakes, {false, true});
    auto g = backward(gen, fake.cache, adv.fake_grads[0]);
    add_scaled(gen_grads, g.params, w);
    side_up += w * g.input;
    return adv.g_loss;
  };
  if (weights.adv_sk > 0.0) {
    c.adv_sk = feature_adversarial(AdversarialBranch::kSketchFeature, model.semantic_to_sketch,
                                   model.sketch_disc, batch.sketches, enc_sk, weights.adv_sk, f_sk,
                                   up_enc_sk);
  }
  if (weights.adv_im > 0.0) {
    c.adv_im = feature_adversarial(AdversarialBranch::kImageFeature, model.semantic_to_image,
                                   model.image_disc, batch.images, enc_im, weights.adv_im, f_im,
                                   up_enc_im);
  }

  if (weights.cyc_sk > 0.0) {
    const auto cyc = cycle_consistency_loss(batch.sketches, enc_sk, model.sketch_to_semantic,
                                            model.semantic_to_sketch);
    c.cyc_sk = cyc.value;
    add_scaled(g_sk, cyc.to_semantic_grads, weights.cyc_sk);
    add_scaled(f_sk, cyc.from_semantic_grads, weights.cyc_sk);
    up_enc_sk += weights.cyc_sk * cyc.side_grad;
  }
  if (weights.cyc_im > 0.0) {
    const auto cyc = cycle_consistency_loss(batch.images, enc_im, model.image_to_semantic,
                                            model.semantic_to_image);
    c.cyc_im = cyc.value;
    add_scaled(g_im, cyc.to_semantic_grads, weights.cyc_im);
    add_scaled(f_im, cyc.from_semantic_grads, weights.cyc_im);
    up_enc_im += weights.cyc_im * cyc.side_grad;
  }

  if (has_encoder) {
    accumulate(enc, backward(model.side_encoder, enc_fwd_sk.cache, up_enc_sk).params);
    accumulate(enc, backward(model.side_encoder, enc_fwd_im.cache, up_enc_im).params);
  }
  if (has_encoder && weights.aenc > 0.0) {
    Eigen::MatrixXd side(batch.sketch_side.rows() + batch.image_side.rows(), batch.sketch_side.cols());
    side << batch.sketch_side, batch.image_side;
    const auto ae = autoencoder_loss(side, model.side_encoder, model.side_decoder, weights.l21);
    c.aenc = ae.value;
    add_scaled(enc, ae.encoder_grads, weights.aenc);
    add_scaled(dec, ae.decoder_grads, weights.aenc);
  }

  out.total = total_objective(c, weights);
  for (auto* group : {&g_sk, &g_im, &f_sk, &f_im, &theta, &enc, &dec}) {
    for (auto& m : *group) out.grads.push_back(std::move(m));
  }
  return out;
}

}  // namespace anyshot
