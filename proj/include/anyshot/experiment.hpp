#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anyshot/config.hpp"
#include "anyshot/feature_store.hpp"
#include "anyshot/itq.hpp"
#include "anyshot/retrieval.hpp"
#include "anyshot/sem_pcyc.hpp"
#include "anyshot/side_info.hpp"

namespace anyshot {

struct ExperimentConfig {
  std::uint64_t seed = 0;

  std::filesystem::path sketches;
  std::filesystem::path images;
  std::filesystem::path taxonomy;
  std::filesystem::path word_vectors;

  std::size_t n_unseen = 3;
  std::size_t min_images = 0;
  std::size_t k = 0;

  SimilarityKind similarity = SimilarityKind::kPath;
  bool use_text = true;
  bool use_hier = true;

  LossWeights weights;
  TrainConfig train;
  FinetuneConfig finetune;

  std::vector<Setting> settings{Setting::kZeroShot, Setting::kGeneralizedZeroShot};
  std::size_t itq_bits = 64;
  std::size_t itq_iterations = 50;

  std::vector<double> prune_ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t gradcheck_instances = 20;

  std::filesystem::path output_dir = "out";

  // Parses every known key and rejects unknown ones; `seed` is mandatory.
  static ExperimentConfig from(const KeyValueConfig& kv);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Checks value ranges and that every data file exists.
  void validate() const;
};

// Everything a subcommand needs from the data files for one k.
struct ExperimentData {
  FeatureSet sketches;
  FeatureSet images;
  ClassEmbeddingTable side;
  SplitSpec split;
  Episode episode;
};

ClassEmbeddingTable build_side_table(const ExperimentConfig& config,
                                     const std::vector<std::string>& class_names);
ExperimentData load_experiment_data(const ExperimentConfig& config, std::size_t k);

TrainResult train_model(const ExperimentConfig& config, const ExperimentData& data,
                        const LossWeights& weights, bool use_side_encoder);

// Gallery and queries for a setting. Generalized galleries add the seen
// training images to the unseen test images; queries are always the unseen
// test sketches.
GallerySpec gallery_for(const ExperimentData& data, Setting setting);

// Codec fitted on the encoded seen training sketches and images.
ItqCodec fit_codec(const ExperimentConfig& config, const SemPcycModel& model,
                   const ExperimentData& data);

EvalReport evaluate_setting(const SemPcycModel& model, const ExperimentData& data, Setting setting,
                            const ItqCodec* codec = nullptr);

// One row of the ablation table.
struct AblationVariant {
  std::string name;
  LossWeights weights;
  bool use_side_encoder = true;
};
std::vector<AblationVariant> ablation_variants(const LossWeights& full);

struct CommandOptions {
  std::string subcommand;
  std::filesystem::path config;
  std::optional<std::size_t> k;
  std::optional<std::string> setting;
  bool binary = false;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;  // synth only
};

// Runs a subcommand and returns the process exit status. Errors propagate
// as exceptions.
int run_command(const CommandOptions& options);

// Writes the synthetic benchmark and a matching experiment.conf to `dir`.
void write_synthetic_experiment(const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace anyshot
