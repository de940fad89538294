#include <fstream>
#include <sstream>

#include "anyshot/errors.hpp"
#include "anyshot/experiment.hpp"
#include "anyshot/gradient_suite.hpp"
#include "anyshot/log.hpp"
#include "anyshot/synthetic.hpp"

namespace anyshot {
namespace {

constexpr double kGradTolerance = 1e-4;

Pairing parse_pairing(const std::string& name) {
  if (name == "coarse") return Pairing::kCoarse;
  if (name == "fine") return Pairing::kFine;
  throw ConfigError("unknown pairing '" + name + "' (expected coarse or fine)");
}

const char* to_string(Pairing p) {
  return p == Pairing::kCoarse ? "coarse" : "fine";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string trace_tsv(const std::vector<EpochTrace>& trace, const char* step_column) {
  std::ostringstream out;
  out << step_column
      << "\tadv_se\tadv_sk\tadv_im\tcyc_sk\tcyc_im\tcls_sk\tcls_im\taenc\ttotal\td_loss_se\td_loss_sk"
         "\td_loss_im\n";
  for (const auto& e : trace) {
    const auto& c = e.components;
    out << e.epoch;
    for (double v : {c.adv_se, c.adv_sk, c.adv_im, c.cyc_sk, c.cyc_im, c.cls_sk, c.cls_im, c.aenc,
                     e.total, e.d_loss_se, e.d_loss_sk, e.d_loss_im}) {
      out << '\t' << format_double(v);
    }
    out << '\n';
  }
  return out.str();
}

std::string manifest_text(const ExperimentConfig& cfg, const SemPcycModel& model) {
  const auto& w = cfg.weights;
  std::ostringstream out;
  out << "feature_dim = " << model.shape.feature_dim << '\n'
      << "semantic_dim = " << model.shape.semantic_dim << '\n'
      << "side_dim = " << model.shape.side_dim << '\n'
      << "use_side_encoder = " << (model.shape.use_side_encoder ? "true" : "false") << '\n'
      << "disc_hidden = " << model.shape.disc_hidden << '\n'
      << "seed = " << cfg.seed << '\n'
      << "epochs = " << cfg.train.epochs << '\n'
      << "batch_size = " << cfg.train.batch_size << '\n'
      << "learning_rate = " << format_double(cfg.train.adam.learning_rate) << '\n';
  const std::pair<const char*, double> lambdas[] = {
      {"lambda_adv_se", w.adv_se}, {"lambda_adv_sk", w.adv_sk}, {"lambda_adv_im", w.adv_im},
      {"lambda_cyc_sk", w.cyc_sk}, {"lambda_cyc_im", w.cyc_im}, {"lambda_cls_sk", w.cls_sk},
      {"lambda_cls_im", w.cls_im}, {"lambda_aenc", w.aenc},     {"lambda_l21", w.l21}};
  for (const auto& [name, value] : lambdas) out << name << " = " << format_double(value) << '\n';
  return out.str();
}

std::filesystem::path out_dir(const ExperimentConfig& cfg, const CommandOptions& opt) {
  return opt.out ? *opt.out : cfg.output_dir;
}

std::filesystem::path model_path(const std::filesystem::path& dir, std::size_t k) {
  return k == 0 ? dir / "model.spck" : dir / ("model_k" + std::to_string(k) + ".spck");
}

SemPcycModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("'" + path.string() + "' not found; run train (or finetune) first");
  }
  return SemPcycModel::load(path);
}

FinetuneConfig finetune_config(const ExperimentConfig& cfg) {
  FinetuneConfig fc = cfg.finetune;
  fc.seed = cfg.seed;
  return fc;
}

void log_report(const std::string& label, const EvalReport& r) {
  log::info(label + ": mAP@all " + format_double(r.map_at_all) + ", P@100 " +
            format_double(r.precision_at_100) + ", mean query time " +
            std::to_string(r.mean_query_seconds * 1e3) + " ms");
}

int cmd_build_sideinfo(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const FeatureSet sketches = load_feature_file(cfg.sketches);
  const ClassEmbeddingTable table = build_side_table(cfg, sketches.label_names);
  const auto path = out_dir(cfg, opt) / "side_info.spck";
  std::filesystem::create_directories(path.parent_path());
  write_side_info(table, path);
  log::info("side information: " + std::to_string(table.num_classes()) + " classes x " +
            std::to_string(table.dim()) + " dims -> " + path.string());
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const ExperimentData data = load_experiment_data(cfg, 0);
  const TrainResult res = train_model(cfg, data, cfg.weights, cfg.train.use_side_encoder);
  const auto dir = out_dir(cfg, opt);
  std::filesystem::create_directories(dir);
  res.model.save(dir / "model.spck");
  write_text(dir / "loss_trace.tsv", trace_tsv(res.trace, "epoch"));
  write_text(dir / "manifest.txt", manifest_text(cfg, res.model));
  log::info("model written to " + (dir / "model.spck").string());
  return 0;
}

int cmd_finetune(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const std::size_t k = opt.k.value_or(cfg.k);
  if (k == 0) throw ConfigError("finetune needs k >= 1 (--k or split.k)");
  const auto dir = out_dir(cfg, opt);
  const SemPcycModel base = load_model(model_path(dir, 0));
  const ExperimentData data = load_experiment_data(cfg, k);
  const TrainResult res = few_shot_finetune(base, data.episode, data.side, cfg.weights, finetune_config(cfg));
  res.model.save(model_path(dir, k));
  write_text(dir / ("finetune_trace_k" + std::to_string(k) + ".tsv"), trace_tsv(res.trace, "step"));
  log::info(std::to_string(k) + "-shot model written to " + model_path(dir, k).string());
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  std::vector<Setting> settings = cfg.settings;
  if (opt.setting) settings = {parse_setting(*opt.setting)};
  const auto dir = out_dir(cfg, opt);
  for (Setting setting : settings) {
    const bool few_shot = setting == Setting::kFewShot || setting == Setting::kGeneralizedFewShot;
    std::size_t k = 0;
    if (few_shot || setting == Setting::kFineGrained) k = opt.k.value_or(cfg.k);
    if (few_shot && k == 0) throw ConfigError(std::string(to_string(setting)) + " needs k >= 1");
    const SemPcycModel model = load_model(model_path(dir, k));
    const ExperimentData data = load_experiment_data(cfg, k);

    std::string name = to_string(setting);
    if (k > 0) name += "_k" + std::to_string(k);
    if (opt.binary) name += "_binary";
    const auto eval_dir = dir / "eval" / name;
    std::filesystem::create_directories(eval_dir);

    std::optional<ItqCodec> codec;
    if (opt.binary) {
      codec = fit_codec(cfg, model, data);
      codec->save(eval_dir / "itq.spck");
    }
    const EvalReport report = evaluate_setting(model, data, setting, codec ? &*codec : nullptr);
    write_report(report, eval_dir);
    log_report(name, report);
  }
  return 0;
}

int cmd_prune_sweep(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const auto dir = out_dir(cfg, opt);
  ExperimentData data = load_experiment_data(cfg, 0);
  if (!cfg.train.use_side_encoder) throw ConfigError("prune-sweep needs model.use_side_encoder = true");
  SemPcycModel trained;
  if (std::filesystem::exists(model_path(dir, 0))) {
    trained = SemPcycModel::load(model_path(dir, 0));
  } else {
    trained = train_model(cfg, data, cfg.weights, true).model;
  }

  std::ostringstream tsv;
  tsv << "ratio\tremoved\tkept\tmap_at_all\tprecision_at_100\n";
  const ClassEmbeddingTable full = data.side;
  for (double ratio : cfg.prune_ratios) {
    const PruneResult pruned = prune_side_info(trained, full, ratio);
    EvalReport report;
    if (pruned.removed.empty()) {
      report = evaluate_setting(trained, data, Setting::kZeroShot);
    } else {
      data.side = pruned.table;
      report = evaluate_setting(train_model(cfg, data, cfg.weights, true).model, data, Setting::kZeroShot);
      data.side = full;
    }
    tsv << format_double(ratio) << '\t' << pruned.removed.size() << '\t' << pruned.kept.size() << '\t'
        << format_double(report.map_at_all) << '\t' << format_double(report.precision_at_100) << '\n';
    log_report("prune ratio " + format_double(ratio), report);
  }
  write_text(dir / "prune_sweep.tsv", tsv.str());
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const auto dir = out_dir(cfg, opt);
  const std::size_t k = opt.k.value_or(cfg.k);
  const ExperimentData data = load_experiment_data(cfg, 0);
  std::optional<ExperimentData> few;
  if (k > 0) few = load_experiment_data(cfg, k);

  std::ostringstream tsv;
  tsv << "configuration\tzero_shot_map\tzero_shot_p100";
  if (few) tsv << "\tfew_shot_k" << k << "_map";
  tsv << '\n';
  for (const auto& v : ablation_variants(cfg.weights)) {
    const SemPcycModel model = train_model(cfg, data, v.weights, v.use_side_encoder).model;
    const EvalReport zs = evaluate_setting(model, data, Setting::kZeroShot);
    log_report(v.name, zs);
    tsv << v.name << '\t' << format_double(zs.map_at_all) << '\t' << format_double(zs.precision_at_100);
    if (few) {
      const SemPcycModel tuned =
          few_shot_finetune(model, few->episode, few->side, v.weights, finetune_config(cfg)).model;
      const EvalReport fs = evaluate_setting(tuned, *few, Setting::kFewShot);
      log_report(v.name + " (" + std::to_string(k) + "-shot)", fs);
      tsv << '\t' << format_double(fs.map_at_all);
    }
    tsv << '\n';
  }
  write_text(dir / "ablation.tsv", tsv.str());
  return 0;
}

int cmd_gradcheck(const ExperimentConfig& cfg, const CommandOptions& opt) {
  GradientSuiteConfig gc;
  gc.instances = cfg.gradcheck_instances;
  gc.seed = cfg.seed;
  const auto rows = run_gradient_suite(gc);
  std::ostringstream tsv;
  tsv << "term\tinstance\tmax_relative_error\tentries\n";
  for (const auto& r : rows) {
    tsv << r.term << '\t' << r.instance << '\t' << format_double(r.max_relative_error) << '\t' << r.entries
        << '\n';
  }
  write_text(out_dir(cfg, opt) / "gradcheck.tsv", tsv.str());
  const double worst = max_error(rows);
  log::info("gradient suite: " + std::to_string(rows.size()) + " checks, max relative error " +
            format_double(worst));
  return worst < kGradTolerance ? 0 : 1;
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv) {
  ExperimentConfig c;
  c.seed = kv.require_uint("seed");

  c.sketches = kv.get_path("data.sketches", "sketches.spfx");
  c.images = kv.get_path("data.images", "images.spfx");
  c.taxonomy = kv.get_path("data.taxonomy", "taxonomy.txt");
  c.word_vectors = kv.get_path("data.word_vectors", "wordvecs.txt");

  c.n_unseen = kv.get_uint("split.n_unseen", c.n_unseen);
  c.min_images = kv.get_uint("split.min_images", c.min_images);
  c.k = kv.get_uint("split.k", c.k);

  c.similarity = parse_similarity_kind(kv.get_string("side.similarity", to_string(c.similarity)));
  c.use_text = kv.get_bool("side.use_text", c.use_text);
  c.use_hier = kv.get_bool("side.use_hier", c.use_hier);

  auto& w = c.weights;
  w.adv_se = kv.get_double("loss.lambda_adv_se", w.adv_se);
  w.adv_sk = kv.get_double("loss.lambda_adv_sk", w.adv_sk);
  w.adv_im = kv.get_double("loss.lambda_adv_im", w.adv_im);
  w.cyc_sk = kv.get_double("loss.lambda_cyc_sk", w.cyc_sk);
  w.cyc_im = kv.get_double("loss.lambda_cyc_im", w.cyc_im);
  w.cls_sk = kv.get_double("loss.lambda_cls_sk", w.cls_sk);
  w.cls_im = kv.get_double("loss.lambda_cls_im", w.cls_im);
  w.aenc = kv.get_double("loss.lambda_aenc", w.aenc);
  w.l21 = kv.get_double("loss.lambda_l21", w.l21);

  auto& t = c.train;
  t.semantic_dim = kv.get_uint("model.semantic_dim", t.semantic_dim);
  t.disc_hidden = kv.get_uint("model.disc_hidden", t.disc_hidden);
  t.use_side_encoder = kv.get_bool("model.use_side_encoder", t.use_side_encoder);
  t.batch_size = kv.get_uint("train.batch_size", t.batch_size);
  t.epochs = kv.get_uint("train.epochs", t.epochs);
  t.adam.learning_rate = kv.get_double("train.learning_rate", t.adam.learning_rate);
  t.seed = c.seed;

  auto& f = c.finetune;
  f.steps = kv.get_uint("finetune.steps", f.steps);
  f.batch_size = kv.get_uint("finetune.batch_size", f.batch_size);
  f.replay_fraction = kv.get_double("finetune.replay_fraction", f.replay_fraction);
  f.pairing = parse_pairing(kv.get_string("finetune.pairing", to_string(f.pairing)));
  f.adam.learning_rate = kv.get_double("finetune.learning_rate", f.adam.learning_rate);
  f.seed = c.seed;

  if (kv.contains("eval.settings")) {
    c.settings.clear();
    for (const auto& s : kv.get_list("eval.settings", {})) c.settings.push_back(parse_setting(s));
  }
  c.itq_bits = kv.get_uint("eval.itq_bits", c.itq_bits);
  c.itq_iterations = kv.get_uint("eval.itq_iterations", c.itq_iterations);

  c.prune_ratios = kv.get_double_list("prune.ratios", c.prune_ratios);
  c.gradcheck_instances = kv.get_uint("gradcheck.instances", c.gradcheck_instances);
  c.output_dir = kv.get_path("output.dir", c.output_dir);

  kv.reject_unknown();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  ExperimentConfig c = from(KeyValueConfig::load(path));
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  for (const auto* p : {&sketches, &images, &taxonomy, &word_vectors}) {
    if (!std::filesystem::exists(*p)) throw ConfigError("data file '" + p->string() + "' does not exist");
  }
  if (!use_text && !use_hier) throw ConfigError("side.use_text and side.use_hier cannot both be false");
  if (n_unseen == 0) throw ConfigError("split.n_unseen must be positive");
  if (train.batch_size == 0 || finetune.batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (train.semantic_dim == 0 || train.disc_hidden == 0) throw ConfigError("model sizes must be positive");
  if (!(train.adam.learning_rate > 0.0) || !(finetune.adam.learning_rate > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(finetune.replay_fraction >= 0.0 && finetune.replay_fraction <= 1.0)) {
    throw ConfigError("finetune.replay_fraction must lie in [0, 1]");
  }
  if (settings.empty()) throw ConfigError("eval.settings is empty");
  if (itq_bits == 0) throw ConfigError("eval.itq_bits must be positive");
  for (double r : prune_ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("prune ratios must lie in [0, 1)");
  }
  if (gradcheck_instances == 0) throw ConfigError("gradcheck.instances must be positive");
  weights.validate();
}

ClassEmbeddingTable build_side_table(const ExperimentConfig& config,
                                     const std::vector<std::string>& class_names) {
  const auto classes = static_cast<Eigen::Index>(class_names.size());
  Eigen::MatrixXd text(classes, 0);
  Eigen::MatrixXd hier(classes, 0);
  if (config.use_text) text = load_word_vectors(config.word_vectors, class_names);
  if (config.use_hier) {
    hier = build_hier_embeddings(load_taxonomy(config.taxonomy, class_names), config.similarity);
  }
  return fuse_side_info(text, hier);
}

ExperimentData load_experiment_data(const ExperimentConfig& config, std::size_t k) {
  ExperimentData d;
  d.sketches = load_feature_file(config.sketches);
  d.images = load_feature_file(config.images);
  if (d.sketches.label_names != d.images.label_names) {
    throw MappingError("sketch and image files have different class vocabularies");
  }
  d.side = build_side_table(config, d.sketches.label_names);
  d.split = build_split(d.sketches, d.images, config.n_unseen, config.seed, config.min_images);
  d.split.k = k;
  d.episode = sample_episode(d.sketches, d.images, d.split);
  return d;
}

TrainResult train_model(const ExperimentConfig& config, const ExperimentData& data,
                        const LossWeights& weights, bool use_side_encoder) {
  TrainConfig tc = config.train;
  tc.seed = config.seed;
  tc.use_side_encoder = use_side_encoder;
  return train(data.episode, data.side, weights, tc);
}

GallerySpec gallery_for(const ExperimentData& data, Setting setting) {
  GallerySpec spec;
  spec.setting = setting;
  spec.queries = data.episode.test.sketches;
  spec.gallery = data.episode.test.images;
  spec.unseen_classes = data.split.unseen_classes;
  if (is_generalized(setting)) spec.gallery = concat(spec.gallery, data.episode.train_seen.images);
  if (setting == Setting::kFineGrained) spec.relevance = Relevance::kSamePairId;
  spec.validate();
  return spec;
}

ItqCodec fit_codec(const ExperimentConfig& config, const SemPcycModel& model,
                   const ExperimentData& data) {
  const Eigen::MatrixXd sk = encode(model, data.episode.train_seen.sketches);
  const Eigen::MatrixXd im = encode(model, data.episode.train_seen.images);
  Eigen::MatrixXd train(sk.rows() + im.rows(), sk.cols());
  train << sk, im;
  const std::size_t bits = std::min(config.itq_bits, static_cast<std::size_t>(train.cols()));
  return itq_fit(train, bits, config.itq_iterations).codec;
}

EvalReport evaluate_setting(const SemPcycModel& model, const ExperimentData& data, Setting setting,
                            const ItqCodec* codec) {
  return evaluate(model, gallery_for(data, setting), codec);
}

std::vector<AblationVariant> ablation_variants(const LossWeights& full) {
  LossWeights adv_only = full;
  adv_only.cyc_sk = adv_only.cyc_im = 0.0;
  adv_only.cls_sk = adv_only.cls_im = 0.0;
  LossWeights adv_cyc = adv_only;
  adv_cyc.cyc_sk = full.cyc_sk;
  adv_cyc.cyc_im = full.cyc_im;
  LossWeights adv_cls = adv_only;
  adv_cls.cls_sk = full.cls_sk;
  adv_cls.cls_im = full.cls_im;
  LossWeights no_sem_adv = full;
  no_sem_adv.adv_se = 0.0;
  LossWeights no_reg = full;
  no_reg.l21 = 0.0;
  return {
      {"adversarial_only", adv_only, true},
      {"adversarial_cycle", adv_cyc, true},
      {"adversarial_classification", adv_cls, true},
      {"no_semantic_adversarial", no_sem_adv, true},
      {"no_side_selection", full, false},
      {"no_regularizer", no_reg, true},
      {"full", full, true},
  };
}

int run_command(const CommandOptions& options) {
  if (options.subcommand == "synth") {
    write_synthetic_experiment(options.out.value_or("synthetic"), options.seed.value_or(0));
    return 0;
  }
  const ExperimentConfig cfg = ExperimentConfig::load(options.config);
  if (options.subcommand == "build-sideinfo") return cmd_build_sideinfo(cfg, options);
  if (options.subcommand == "train") return cmd_train(cfg, options);
  if (options.subcommand == "finetune") return cmd_finetune(cfg, options);
  if (options.subcommand == "evaluate") return cmd_evaluate(cfg, options);
  if (options.subcommand == "prune-sweep") return cmd_prune_sweep(cfg, options);
  if (options.subcommand == "ablate") return cmd_ablate(cfg, options);
  if (options.subcommand == "gradcheck") return cmd_gradcheck(cfg, options);
  throw ConfigError("unknown subcommand '" + options.subcommand + "'");
}

void write_synthetic_experiment(const std::filesystem::path& dir, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.seed = seed;
  write_synthetic(make_synthetic(sc), dir);
  std::ostringstream conf;
  conf << "# Synthetic Gaussian-cluster benchmark\n"
       << "seed = " << seed << "\n\n"
       << "data.sketches = sketches.spfx\n"
       << "data.images = images.spfx\n"
       << "data.taxonomy = taxonomy.txt\n"
       << "data.word_vectors = wordvecs.txt\n\n"
       << "split.n_unseen = 3\n"
       << "split.k = 0\n\n"
       << "side.similarity = path\n\n"
       << "eval.settings = zero_shot, generalized_zero_shot\n\n"
       << "output.dir = out\n";
  write_text(dir / "experiment.conf", conf.str());
}

}  // namespace anyshot
