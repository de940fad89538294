#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <thread>

#include "anyshot/errors.hpp"
#include "anyshot/log.hpp"
#include "anyshot/retrieval.hpp"

namespace anyshot {
namespace {

struct QueryResult {
  bool evaluated = false;
  double ap = 0.0;
  double precision = 0.0;
  std::vector<PrPoint> curve;
};

QueryResult score_ranking(const std::vector<std::size_t>& order, std::uint64_t key,
                          const std::vector<std::uint64_t>& gallery_keys) {
  std::vector<bool> rel(order.size());
  bool any = false;
  for (std::size_t r = 0; r < order.size(); ++r) {
    rel[r] = gallery_keys[order[r]] == key;
    any = any || rel[r];
  }
  QueryResult q;
  if (!any) return q;
  q.evaluated = true;
  q.ap = average_precision(rel);
  q.precision = precision_at_k(rel, kPrecisionDepth);
  q.curve = pr_curve(rel);
  return q;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(n, evaluation_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

EvalReport aggregate(std::vector<QueryResult>& results, std::size_t gallery_size, double seconds) {
  EvalReport report;
  report.pr_curve.assign(gallery_size, PrPoint{});
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& q = results[i];
    if (!q.evaluated) {
      ++report.excluded_queries;
      continue;
    }
    report.per_query_ap.push_back(q.ap);
    report.query_ids.push_back(i);
    report.precision_at_100 += q.precision;
    for (std::size_t r = 0; r < gallery_size; ++r) {
      report.pr_curve[r].recall += q.curve[r].recall;
      report.pr_curve[r].precision += q.curve[r].precision;
    }
  }
  if (report.excluded_queries > 0) {
    log::warn(std::to_string(report.excluded_queries) +
              " quer" + (report.excluded_queries == 1 ? "y has" : "ies have") +
              " no relevant gallery item and " + (report.excluded_queries == 1 ? "is" : "are") +
              " excluded from the mean");
  }
  const std::size_t n = report.per_query_ap.size();
  if (n == 0) throw EvaluationError("no query has a relevant gallery item");
  const double dn = static_cast<double>(n);
  report.map_at_all = std::accumulate(report.per_query_ap.begin(), report.per_query_ap.end(), 0.0) / dn;
  report.precision_at_100 /= dn;
  for (auto& p : report.pr_curve) {
    p.recall /= dn;
    p.precision /= dn;
  }
  report.mean_query_seconds = results.empty() ? 0.0 : seconds / static_cast<double>(results.size());
  return report;
}

void check_keys(std::size_t queries, std::size_t gallery, const RelevanceKeys& keys) {
  if (keys.queries.size() != queries || keys.gallery.size() != gallery) {
    throw ShapeError("relevance keys do not match the query/gallery sizes");
  }
  if (gallery == 0) throw ContractError("empty gallery");
}

}  // namespace

const char* to_string(Setting setting) {
  switch (setting) {
    case Setting::kZeroShot: return "zero_shot";
    case Setting::kGeneralizedZeroShot: return "generalized_zero_shot";
    case Setting::kFewShot: return "few_shot";
    case Setting::kGeneralizedFewShot: return "generalized_few_shot";
    case Setting::kFineGrained: return "fine_grained";
  }
  return "?";
}

Setting parse_setting(const std::string& name) {
  for (Setting s : {Setting::kZeroShot, Setting::kGeneralizedZeroShot, Setting::kFewShot,
                    Setting::kGeneralizedFewShot, Setting::kFineGrained}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown setting '" + name + "'");
}

bool is_generalized(Setting setting) {
  return setting == Setting::kGeneralizedZeroShot || setting == Setting::kGeneralizedFewShot;
}

std::vector<std::size_t> rank_gallery(const Eigen::RowVectorXd& query, const Eigen::MatrixXd& gallery) {
  if (gallery.rows() == 0) throw ContractError("empty gallery");
  if (gallery.cols() != query.size()) throw ShapeError("query and gallery widths differ");
  // Squared distances order exactly like distances.
  const Eigen::VectorXd dist = (gallery.rowwise() - query).rowwise().squaredNorm();
  std::vector<std::size_t> order(static_cast<std::size_t>(gallery.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist(static_cast<Eigen::Index>(a)) < dist(static_cast<Eigen::Index>(b));
  });
  return order;
}

double average_precision(const std::vector<bool>& ranked_relevance) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked_relevance.size(); ++r) {
    if (ranked_relevance[r]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) throw UndefinedApError("average precision is undefined without a relevant item");
  return sum / static_cast<double>(hits);
}

double precision_at_k(const std::vector<bool>& ranked_relevance, std::size_t k) {
  if (k == 0) throw ContractError("precision@k needs k >= 1");
  const std::size_t depth = std::min(k, ranked_relevance.size());
  if (depth == 0) return 0.0;
  const auto hits = std::count(ranked_relevance.begin(),
                               ranked_relevance.begin() + static_cast<std::ptrdiff_t>(depth), true);
  return static_cast<double>(hits) / static_cast<double>(depth);
}

std::vector<PrPoint> pr_curve(const std::vector<bool>& ranked_relevance) {
  const auto total = std::count(ranked_relevance.begin(), ranked_relevance.end(), true);
  if (total == 0) throw UndefinedApError("PR curve is undefined without a relevant item");
  std::vector<PrPoint> out;
  out.reserve(ranked_relevance.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked_relevance.size(); ++r) {
    if (ranked_relevance[r]) ++hits;
    out.push_back({static_cast<double>(hits) / static_cast<double>(total),
                   static_cast<double>(hits) / static_cast<double>(r + 1)});
  }
  return out;
}

void GallerySpec::validate() const {
  if (gallery.modality != Modality::kImage || queries.modality != Modality::kSketch) {
    throw ContractError("retrieval expects sketch queries against an image gallery");
  }
  if (gallery.empty()) throw ContractError("empty gallery");
  if (queries.empty()) throw ContractError("no queries");
  if (gallery.dim() != queries.dim()) throw ShapeError("query and gallery feature widths differ");
  const bool fine = setting == Setting::kFineGrained || relevance == Relevance::kSamePairId;
  if (fine && (!gallery.pair_ids || !queries.pair_ids)) {
    throw ContractError("fine-grained retrieval needs pair ids on queries and gallery");
  }
  if (unseen_classes.empty()) return;
  auto unseen = [&](std::uint32_t c) {
    return std::binary_search(unseen_classes.begin(), unseen_classes.end(), c);
  };
  const bool has_seen = std::any_of(gallery.labels.begin(), gallery.labels.end(),
                                    [&](std::uint32_t c) { return !unseen(c); });
  const bool has_unseen = std::any_of(gallery.labels.begin(), gallery.labels.end(), unseen);
  if (is_generalized(setting)) {
    if (!has_seen || !has_unseen) {
      throw ContractError(std::string(to_string(setting)) + " gallery must mix seen and unseen classes");
    }
  } else if (setting != Setting::kFineGrained && has_seen) {
    throw ContractError(std::string(to_string(setting)) + " gallery must hold unseen classes only");
  }
}

RelevanceKeys relevance_keys(const GallerySpec& spec) {
  RelevanceKeys keys;
  if (spec.relevance == Relevance::kSamePairId || spec.setting == Setting::kFineGrained) {
    if (!spec.queries.pair_ids || !spec.gallery.pair_ids) {
      throw ContractError("pair-id relevance needs pair ids on both sides");
    }
    keys.queries = *spec.queries.pair_ids;
    keys.gallery = *spec.gallery.pair_ids;
  } else {
    keys.queries.assign(spec.queries.labels.begin(), spec.queries.labels.end());
    keys.gallery.assign(spec.gallery.labels.begin(), spec.gallery.labels.end());
  }
  return keys;
}

EvalReport evaluate_embeddings(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                               const RelevanceKeys& keys) {
  check_keys(static_cast<std::size_t>(queries.rows()), static_cast<std::size_t>(gallery.rows()), keys);
  if (queries.cols() != gallery.cols()) throw ShapeError("query and gallery embedding widths differ");
  std::vector<QueryResult> results(static_cast<std::size_t>(queries.rows()));
  const auto start = std::chrono::steady_clock::now();
  parallel_for(results.size(), [&](std::size_t i) {
    const auto order = rank_gallery(queries.row(static_cast<Eigen::Index>(i)), gallery);
    results[i] = score_ranking(order, keys.queries[i], keys.gallery);
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return aggregate(results, static_cast<std::size_t>(gallery.rows()), seconds);
}

EvalReport evaluate_codes(const BitCodes& queries, const BitCodes& gallery, const RelevanceKeys& keys) {
  check_keys(queries.size(), gallery.size(), keys);
  if (queries.bits != gallery.bits) throw ShapeError("query and gallery code widths differ");
  std::vector<QueryResult> results(queries.size());
  const auto start = std::chrono::steady_clock::now();
  parallel_for(results.size(), [&](std::size_t i) {
    results[i] = score_ranking(hamming_rank(queries.code(i), gallery), keys.queries[i], keys.gallery);
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return aggregate(results, gallery.size(), seconds);
}

EvalReport evaluate(const SemPcycModel& model, const GallerySpec& spec, const ItqCodec* codec) {
  spec.validate();
  const RelevanceKeys keys = relevance_keys(spec);
  const Eigen::MatrixXd q = encode(model, spec.queries);
  const Eigen::MatrixXd g = encode(model, spec.gallery);
  EvalReport report = codec ? evaluate_codes(itq_encode(*codec, q), itq_encode(*codec, g), keys)
                            : evaluate_embeddings(q, g, keys);
  log::info(std::string(to_string(spec.setting)) + (codec ? " (binary)" : "") + ": mAP@all " +
            format_double(report.map_at_all) + ", mean query time " +
            std::to_string(report.mean_query_seconds * 1e3) + " ms");
  return report;
}

std::size_t evaluation_threads() {
  if (const char* env = std::getenv("ANYSHOT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    log::warn(std::string("ignoring invalid ANYSHOT_THREADS='") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
    return out;
  };
  {
    auto out = open("report.tsv");
    out << "map_at_all\t" << format_double(report.map_at_all) << '\n'
        << "precision_at_100\t" << format_double(report.precision_at_100) << '\n'
        << "queries\t" << report.per_query_ap.size() << '\n'
        << "excluded_queries\t" << report.excluded_queries << '\n';
  }
  {
    auto out = open("pr_curve.tsv");
    for (const auto& p : report.pr_curve) {
      out << format_double(p.recall) << '\t' << format_double(p.precision) << '\n';
    }
  }
  {
    auto out = open("per_query_ap.tsv");
    for (std::size_t i = 0; i < report.per_query_ap.size(); ++i) {
      out << report.query_ids[i] << '\t' << format_double(report.per_query_ap[i]) << '\n';
    }
  }
}

}  // namespace anyshot
