#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace anyshot {

enum class SimilarityKind { kPath, kLin, kJiangConrath };

const char* to_string(SimilarityKind kind);
SimilarityKind parse_similarity_kind(const std::string& name);

// A rooted class taxonomy given as an edge list. Node order is the fixed
// coordinate order of hierarchical embeddings.
class Taxonomy {
 public:
  // class_nodes[c] is the node of class c. Throws FormatError on a malformed
  // graph (zero or several roots, cycles, unknown nodes) and MappingError on
  // an out-of-range class node.
  Taxonomy(std::vector<std::string> nodes,
           std::vector<std::pair<std::size_t, std::size_t>> child_parent_edges,
           std::vector<std::size_t> class_nodes);

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_classes() const { return class_nodes_.size(); }
  const std::vector<std::string>& nodes() const { return nodes_; }
  std::size_t root() const { return root_; }
  std::size_t class_node(std::size_t class_index) const;
  std::optional<std::size_t> find_node(const std::string& name) const;
  const std::vector<std::size_t>& parents(std::size_t node) const { return parents_.at(node); }

  std::size_t descendant_count(std::size_t node) const { return descendants_.at(node); }
  bool is_ancestor(std::size_t ancestor, std::size_t node) const;

  // Intrinsic information content 1 - ln(desc(n)+1) / ln(|nodes|).
  double information_content(std::size_t node) const;

  // Minimum number of edges between a and b through a common ancestor.
  std::size_t hops(std::size_t a, std::size_t b) const;

  // Most informative common ancestor (ties: fewer hops, then lower index).
  std::size_t lowest_common_subsumer(std::size_t a, std::size_t b) const;

 private:
  void check_node(std::size_t node) const;

  std::vector<std::string> nodes_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::size_t> class_nodes_;
  std::size_t root_ = 0;
  std::vector<std::size_t> descendants_;
  // up_distance_[n] maps every ancestor of n (including n) to its shortest
  // upward distance.
  std::vector<std::map<std::size_t, std::size_t>> up_distance_;
};

// Parses the sectioned taxonomy text format ([nodes], [edges], [classes],
// optional [aliases]) and maps each of class_names onto a node. Aliases win
// over [classes]; a class missing from both falls back to a node with the
// same name.
Taxonomy load_taxonomy(const std::filesystem::path& path,
                       const std::vector<std::string>& class_names);

double intrinsic_ic(const Taxonomy& taxonomy, std::size_t node);

double taxonomy_similarity(const Taxonomy& taxonomy, std::size_t a, std::size_t b,
                           SimilarityKind kind);

// [S(c, n_1), ..., S(c, n_|nodes|)] for the node of class c.
Eigen::VectorXd build_hier_embedding(const Taxonomy& taxonomy, std::size_t class_index,
                                     SimilarityKind kind);

// One row per class of the taxonomy.
Eigen::MatrixXd build_hier_embeddings(const Taxonomy& taxonomy, SimilarityKind kind);

// Splits a class name on space, hyphen and underscore.
std::vector<std::string> class_name_tokens(const std::string& class_name);

// Reads "token v1 ... vk" lines. A class whose full name is a token uses that
// vector; otherwise the mean over its resolvable sub-tokens.
Eigen::MatrixXd load_word_vectors(const std::filesystem::path& path,
                                  const std::vector<std::string>& class_names);

struct ClassEmbeddingTable {
  Eigen::MatrixXd text;   // C x k_t
  Eigen::MatrixXd hier;   // C x |nodes|
  Eigen::MatrixXd fused;  // C x (k_t + |nodes|)

  std::size_t num_classes() const { return static_cast<std::size_t>(fused.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(fused.cols()); }
};

ClassEmbeddingTable fuse_side_info(const Eigen::MatrixXd& text, const Eigen::MatrixXd& hier);

// Keeps the given fused columns (ascending), splitting them back into their
// text and hierarchical parts.
ClassEmbeddingTable select_dimensions(const ClassEmbeddingTable& table,
                                      std::span<const std::size_t> kept_columns);

void write_side_info(const ClassEmbeddingTable& table, const std::filesystem::path& path);
ClassEmbeddingTable read_side_info(const std::filesystem::path& path);

}  // namespace anyshot
