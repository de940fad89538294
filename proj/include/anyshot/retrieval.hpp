#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "anyshot/feature_store.hpp"
#include "anyshot/itq.hpp"
#include "anyshot/sem_pcyc.hpp"

namespace anyshot {

enum class Setting { kZeroShot, kGeneralizedZeroShot, kFewShot, kGeneralizedFewShot, kFineGrained };

const char* to_string(Setting setting);
Setting parse_setting(const std::string& name);
bool is_generalized(Setting setting);

enum class Relevance { kSameClass, kSamePairId };

// Gallery indices by ascending Euclidean distance to `query`, ties by
// ascending index. Throws ContractError on an empty gallery.
std::vector<std::size_t> rank_gallery(const Eigen::RowVectorXd& query, const Eigen::MatrixXd& gallery);

// Average precision over the full ranked list. Throws UndefinedApError when
// nothing is relevant.
double average_precision(const std::vector<bool>& ranked_relevance);

// Relevant fraction of the top min(k, N).
double precision_at_k(const std::vector<bool>& ranked_relevance, std::size_t k);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

// One point per rank position.
std::vector<PrPoint> pr_curve(const std::vector<bool>& ranked_relevance);

struct GallerySpec {
  Setting setting = Setting::kZeroShot;
  FeatureSet gallery;  // images
  FeatureSet queries;  // sketches
  Relevance relevance = Relevance::kSameClass;
  // When non-empty, used to check that the gallery composition matches the
  // setting.
  std::vector<std::uint32_t> unseen_classes;

  void validate() const;
};

struct EvalReport {
  double map_at_all = 0.0;
  double precision_at_100 = 0.0;
  std::vector<PrPoint> pr_curve;        // mean recall / precision per rank
  std::vector<double> per_query_ap;     // evaluated queries only
  std::vector<std::size_t> query_ids;   // query row of each per_query_ap entry
  std::size_t excluded_queries = 0;     // queries without any relevant item
  double mean_query_seconds = 0.0;      // informational, never serialized
};

// Relevance is equality of keys (class label or pair id).
struct RelevanceKeys {
  std::vector<std::uint64_t> queries;
  std::vector<std::uint64_t> gallery;
};

RelevanceKeys relevance_keys(const GallerySpec& spec);

inline constexpr std::size_t kPrecisionDepth = 100;

// Ranks every query against the gallery and aggregates. Queries without a
// relevant item are skipped with a warning; if none is left, throws
// EvaluationError. Work is split over up to evaluation_threads() workers
// and reduced in query order, so results do not depend on the thread count.
EvalReport evaluate_embeddings(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                               const RelevanceKeys& keys);
EvalReport evaluate_codes(const BitCodes& queries, const BitCodes& gallery, const RelevanceKeys& keys);

// Encodes both sides with the model, optionally binarizes with `codec`.
EvalReport evaluate(const SemPcycModel& model, const GallerySpec& spec, const ItqCodec* codec = nullptr);

// ANYSHOT_THREADS when set to a positive integer, else the hardware count.
std::size_t evaluation_threads();

// report.tsv ("metric<TAB>value") and pr_curve.tsv ("recall<TAB>precision")
// plus per_query_ap.tsv ("query<TAB>ap") in `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace anyshot
