#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "anyshot/errors.hpp"
#include "anyshot/log.hpp"
#include "anyshot/rng.hpp"
#include "anyshot/sem_pcyc.hpp"

namespace anyshot {
namespace {

constexpr std::uint64_t kEpochStream = 0xe90c;
constexpr std::uint64_t kFinetuneStream = 0xf1e7;

// Feature rows in double, plus the scaled side table, prepared once.
struct TrainingData {
  Eigen::MatrixXd sketches;
  Eigen::MatrixXd images;
  const FeatureSet* sketch_set = nullptr;
  const FeatureSet* image_set = nullptr;
  Eigen::MatrixXd scaled_side;  // C x k
};

TrainingData prepare(const SemPcycModel& model, const ModalityPair& data,
                     const ClassEmbeddingTable& side) {
  TrainingData out;
  out.sketches = data.sketches.vectors.cast<double>();
  out.images = data.images.vectors.cast<double>();
  out.sketch_set = &data.sketches;
  out.image_set = &data.images;
  out.scaled_side = model.scale_side(side.fused);
  return out;
}

TrainingBatch gather(const TrainingData& data, std::span<const std::size_t> sketch_rows,
                     std::span<const std::size_t> image_rows) {
  TrainingBatch b;
  const auto ns = static_cast<Eigen::Index>(sketch_rows.size());
  const auto ni = static_cast<Eigen::Index>(image_rows.size());
  b.sketches.resize(ns, data.sketches.cols());
  b.images.resize(ni, data.images.cols());
  b.sketch_side.resize(ns, data.scaled_side.cols());
  b.image_side.resize(ni, data.scaled_side.cols());
  for (Eigen::Index i = 0; i < ns; ++i) {
    const std::size_t r = sketch_rows[static_cast<std::size_t>(i)];
    const std::uint32_t label = data.sketch_set->labels[r];
    b.sketches.row(i) = data.sketches.row(static_cast<Eigen::Index>(r));
    b.sketch_side.row(i) = data.scaled_side.row(label);
    b.sketch_labels.push_back(label);
  }
  for (Eigen::Index i = 0; i < ni; ++i) {
    const std::size_t r = image_rows[static_cast<std::size_t>(i)];
    const std::uint32_t label = data.image_set->labels[r];
    b.images.row(i) = data.images.row(static_cast<Eigen::Index>(r));
    b.image_side.row(i) = data.scaled_side.row(label);
    b.image_labels.push_back(label);
  }
  return b;
}

void require_finite(double value, const char* term, std::size_t step) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite ") + term + " loss at step " + std::to_string(step));
  }
}

struct Optimizers {
  AdamState disc;
  AdamState gen;
};

// One discriminator update followed by one joint generator update.
EpochTrace train_step(SemPcycModel& model, const TrainingBatch& batch, const LossWeights& weights,
                      Optimizers& opt, std::size_t step) {
  EpochTrace t;
  auto d = discriminator_step_gradients(model, batch, weights);
  require_finite(d.d_loss_se, "semantic discriminator", step);
  require_finite(d.d_loss_sk, "sketch discriminator", step);
  require_finite(d.d_loss_im, "image discriminator", step);
  adam_step(discriminator_parameters(model), d.grads, opt.disc);
  t.d_loss_se = d.d_loss_se;
  t.d_loss_sk = d.d_loss_sk;
  t.d_loss_im = d.d_loss_im;

  auto g = generator_step_gradients(model, batch, weights);
  const auto& c = g.components;
  require_finite(c.adv_se, "semantic adversarial", step);
  require_finite(c.adv_sk, "sketch adversarial", step);
  require_finite(c.adv_im, "image adversarial", step);
  require_finite(c.cyc_sk, "sketch cycle", step);
  require_finite(c.cyc_im, "image cycle", step);
  require_finite(c.cls_sk, "sketch classification", step);
  require_finite(c.cls_im, "image classification", step);
  require_finite(c.aenc, "auto-encoder", step);
  adam_step(generator_parameters(model), g.grads, opt.gen);
  t.components = c;
  t.total = g.total;
  return t;
}

void add_into(EpochTrace& sum, const EpochTrace& t) {
  auto& a = sum.components;
  const auto& b = t.components;
  a.adv_se += b.adv_se;
  a.adv_sk += b.adv_sk;
  a.adv_im += b.adv_im;
  a.cyc_sk += b.cyc_sk;
  a.cyc_im += b.cyc_im;
  a.cls_sk += b.cls_sk;
  a.cls_im += b.cls_im;
  a.aenc += b.aenc;
  sum.total += t.total;
  sum.d_loss_se += t.d_loss_se;
  sum.d_loss_sk += t.d_loss_sk;
  sum.d_loss_im += t.d_loss_im;
}

void divide(EpochTrace& t, double n) {
  auto& a = t.components;
  for (double* v : {&a.adv_se, &a.adv_sk, &a.adv_im, &a.cyc_sk, &a.cyc_im, &a.cls_sk, &a.cls_im, &a.aenc,
                    &t.total, &t.d_loss_se, &t.d_loss_sk, &t.d_loss_im}) {
    *v /= n;
  }
}

std::vector<std::uint32_t> distinct_labels(const ModalityPair& data) {
  std::vector<std::uint32_t> out(data.sketches.labels);
  out.insert(out.end(), data.images.labels.begin(), data.images.labels.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void check_side_coverage(const ModalityPair& data, const ClassEmbeddingTable& side) {
  for (auto c : distinct_labels(data)) {
    if (c >= side.num_classes()) {
      throw MappingError("class " + std::to_string(c) + " has no side information");
    }
  }
}

void check_features(const SemPcycModel& model, const ModalityPair& data) {
  if (data.sketches.dim() != model.shape.feature_dim || data.images.dim() != model.shape.feature_dim) {
    throw ShapeError("feature width does not match the model");
  }
}

}  // namespace

TrainResult train(const Episode& episode, const ClassEmbeddingTable& side, const LossWeights& weights,
                  const TrainConfig& config) {
  weights.validate();
  const ModalityPair& seen = episode.train_seen;
  if (seen.sketches.empty() || seen.images.empty()) throw ContractError("no seen-class training data");
  if (seen.sketches.dim() != seen.images.dim()) throw ShapeError("sketch and image widths differ");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  check_side_coverage(seen, side);

  ModelShape shape;
  shape.feature_dim = seen.sketches.dim();
  shape.semantic_dim = config.semantic_dim;
  shape.disc_hidden = config.disc_hidden;
  shape.use_side_encoder = config.use_side_encoder;
  TrainResult result;
  result.model = make_model(shape, side, distinct_labels(seen), config.seed);
  SemPcycModel& model = result.model;

  const TrainingData data = prepare(model, seen, side);
  const std::size_t ns = seen.sketches.size();
  const std::size_t ni = seen.images.size();
  const std::size_t longest = std::max(ns, ni);
  const std::size_t batches = (longest + config.batch_size - 1) / config.batch_size;

  Optimizers opt{AdamState{config.adam, {}, {}, 0}, AdamState{config.adam, {}, {}, 0}};
  std::vector<std::size_t> sk_perm(ns), im_perm(ni), sk_rows, im_rows;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = make_rng(mix_seed(config.seed, kEpochStream), epoch);
    std::iota(sk_perm.begin(), sk_perm.end(), std::size_t{0});
    std::iota(im_perm.begin(), im_perm.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(sk_perm), rng);
    shuffle(std::span<std::size_t>(im_perm), rng);

    EpochTrace sum;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t start = b * config.batch_size;
      const std::size_t size = std::min(config.batch_size, longest - start);
      sk_rows.clear();
      im_rows.clear();
      // The shorter modality wraps around within the epoch.
      for (std::size_t i = 0; i < size; ++i) {
        sk_rows.push_back(sk_perm[(start + i) % ns]);
        im_rows.push_back(im_perm[(start + i) % ni]);
      }
      add_into(sum, train_step(model, gather(data, sk_rows, im_rows), weights, opt, step++));
    }
    divide(sum, static_cast<double>(batches));
    sum.epoch = epoch;
    log::debug("epoch " + std::to_string(epoch) + " total " + std::to_string(sum.total) + " cls_sk " +
               std::to_string(sum.components.cls_sk));
    result.trace.push_back(sum);
    if (config.on_epoch) config.on_epoch(model, sum);
  }
  return result;
}

TrainResult few_shot_finetune(const SemPcycModel& model, const Episode& episode,
                              const ClassEmbeddingTable& side, const LossWeights& weights,
                              const FinetuneConfig& config) {
  weights.validate();
  const ModalityPair& aux = episode.aux_unseen;
  if (aux.sketches.empty() || aux.images.empty()) {
    throw ContractError("few-shot fine-tuning needs k >= 1 auxiliary instances per class");
  }
  if (!(config.replay_fraction >= 0.0 && config.replay_fraction < 1.0)) {
    throw ConfigError("replay fraction must lie in [0, 1)");
  }
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  check_features(model, aux);
  check_side_coverage(aux, side);

  TrainResult result;
  result.model = model;
  if (config.steps == 0) return result;
  SemPcycModel& m = result.model;
  extend_classifier(m, distinct_labels(aux));

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (config.pairing == Pairing::kCoarse) {
    for (auto c : distinct_labels(aux)) {
      for (std::size_t i : aux.sketches.rows_of_class(c)) {
        for (std::size_t j : aux.images.rows_of_class(c)) pairs.emplace_back(i, j);
      }
    }
  } else {
    if (!aux.sketches.pair_ids || !aux.images.pair_ids) {
      throw EpisodeError("fine-grained pairing needs pair ids on both modalities");
    }
    std::unordered_multimap<std::uint64_t, std::size_t> by_id;
    for (std::size_t j = 0; j < aux.images.size(); ++j) by_id.emplace((*aux.images.pair_ids)[j], j);
    for (std::size_t i = 0; i < aux.sketches.size(); ++i) {
      auto [lo, hi] = by_id.equal_range((*aux.sketches.pair_ids)[i]);
      std::vector<std::size_t> matches;
      for (auto it = lo; it != hi; ++it) matches.push_back(it->second);
      std::sort(matches.begin(), matches.end());
      for (std::size_t j : matches) pairs.emplace_back(i, j);
    }
  }
  if (pairs.empty()) throw EpisodeError("no sketch/image pairs in the auxiliary set");

  // Replayed seen pairs are appended to the auxiliary rows, so both sets are
  // stacked into one table for gathering.
  const std::size_t replay = static_cast<std::size_t>(
      std::llround(config.replay_fraction * static_cast<double>(config.batch_size)));
  const ModalityPair& seen = episode.train_seen;
  ModalityPair pool = aux;
  if (replay > 0) {
    if (seen.sketches.empty() || seen.images.empty()) throw ContractError("replay needs seen training data");
    check_features(model, seen);
    pool.sketches = concat(aux.sketches, seen.sketches);
    pool.images = concat(aux.images, seen.images);
  }
  const TrainingData data = prepare(m, pool, side);
  const std::size_t aux_per_step = std::min(pairs.size(), std::max<std::size_t>(1, config.batch_size - replay));

  Rng rng = make_rng(mix_seed(config.seed, kFinetuneStream));
  shuffle(std::span(pairs), rng);
  std::size_t cursor = 0;
  Optimizers opt{AdamState{config.adam, {}, {}, 0}, AdamState{config.adam, {}, {}, 0}};
  std::vector<std::size_t> sk_rows, im_rows;
  for (std::size_t step = 0; step < config.steps; ++step) {
    sk_rows.clear();
    im_rows.clear();
    for (std::size_t i = 0; i < aux_per_step; ++i) {
      if (cursor == pairs.size()) {
        shuffle(std::span(pairs), rng);
        cursor = 0;
      }
      sk_rows.push_back(pairs[cursor].first);
      im_rows.push_back(pairs[cursor].second);
      ++cursor;
    }
    for (std::size_t i = 0; i < replay; ++i) {
      const std::size_t s = uniform_index(rng, seen.sketches.size());
      const auto images_of_class = seen.images.rows_of_class(seen.sketches.labels[s]);
      if (images_of_class.empty()) continue;
      sk_rows.push_back(aux.sketches.size() + s);
      im_rows.push_back(aux.images.size() + images_of_class[uniform_index(rng, images_of_class.size())]);
    }
    EpochTrace t = train_step(m, gather(data, sk_rows, im_rows), weights, opt, step);
    t.epoch = step;
    result.trace.push_back(t);
  }
  return result;
}

PruneResult prune_side_info(const SemPcycModel& model, const ClassEmbeddingTable& table, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ContractError("prune ratio must lie in [0, 1)");
  if (!model.shape.use_side_encoder) throw ContractError("pruning needs a trained side-information encoder");
  const std::size_t k = model.shape.side_dim;
  if (table.dim() != k) throw ShapeError("side table width does not match the encoder");

  const Eigen::MatrixXd& w1 = model.side_encoder.layer(0).weight;
  const Eigen::VectorXd norms = w1.rowwise().norm();
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return norms(static_cast<Eigen::Index>(a)) < norms(static_cast<Eigen::Index>(b));
  });
  // The epsilon absorbs products such as 0.1 * 70 landing just below 7.
  const auto n_remove = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(k) + 1e-9));

  PruneResult out;
  out.removed.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_remove));
  out.kept.assign(order.begin() + static_cast<std::ptrdiff_t>(n_remove), order.end());
  std::sort(out.removed.begin(), out.removed.end());
  std::sort(out.kept.begin(), out.kept.end());
  out.table = select_dimensions(table, out.kept);

  const std::vector<Eigen::Index> idx(out.kept.begin(), out.kept.end());
  out.model = model;
  SemPcycModel& m = out.model;
  DenseLayer enc = m.side_encoder.layer(0);
  enc.weight = Eigen::MatrixXd(enc.weight(idx, Eigen::all));
  m.side_encoder = DenseNet({std::move(enc)});
  DenseLayer dec = m.side_decoder.layer(0);
  dec.weight = Eigen::MatrixXd(dec.weight(Eigen::all, idx));
  dec.bias = Eigen::MatrixXd(dec.bias(Eigen::all, idx));
  m.side_decoder = DenseNet({std::move(dec)});
  m.side_min = Eigen::RowVectorXd(m.side_min(idx));
  m.side_max = Eigen::RowVectorXd(m.side_max(idx));
  m.shape.side_dim = out.kept.size();
  return out;
}

}  // namespace anyshot
