#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "anyshot/errors.hpp"
#include "anyshot/side_info.hpp"

namespace anyshot {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::pair<std::string, std::string> split_tab(const std::string& line, std::size_t line_no) {
  const auto tab = line.find('\t');
  if (tab == std::string::npos) {
    throw FormatError("taxonomy line " + std::to_string(line_no) + ": expected two tab-separated fields");
  }
  return {trim(line.substr(0, tab)), trim(line.substr(tab + 1))};
}

}  // namespace

const char* to_string(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::kPath: return "path";
    case SimilarityKind::kLin: return "lin";
    case SimilarityKind::kJiangConrath: return "jiang_conrath";
  }
  return "?";
}

SimilarityKind parse_similarity_kind(const std::string& name) {
  if (name == "path") return SimilarityKind::kPath;
  if (name == "lin") return SimilarityKind::kLin;
  if (name == "jiang_conrath" || name == "jcn") return SimilarityKind::kJiangConrath;
  throw ConfigError("unknown similarity kind '" + name + "'");
}

Taxonomy::Taxonomy(std::vector<std::string> nodes,
                   std::vector<std::pair<std::size_t, std::size_t>> child_parent_edges,
                   std::vector<std::size_t> class_nodes)
    : nodes_(std::move(nodes)), parents_(nodes_.size()), class_nodes_(std::move(class_nodes)) {
  const std::size_t n = nodes_.size();
  if (n == 0) throw FormatError("taxonomy has no nodes");

  std::vector<std::vector<std::size_t>> children(n);
  for (auto [child, parent] : child_parent_edges) {
    if (child >= n || parent >= n) throw FormatError("taxonomy edge references an unknown node");
    if (child == parent) throw FormatError("taxonomy node '" + nodes_[child] + "' is its own parent");
    auto& ps = parents_[child];
    if (std::find(ps.begin(), ps.end(), parent) != ps.end()) continue;
    ps.push_back(parent);
    children[parent].push_back(child);
  }
  for (auto& ps : parents_) std::sort(ps.begin(), ps.end());

  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i) {
    if (parents_[i].empty()) roots.push_back(i);
  }
  if (roots.size() != 1) {
    throw FormatError("taxonomy must have exactly one root, found " + std::to_string(roots.size()));
  }
  root_ = roots.front();

  // Kahn's algorithm from the root downwards: every node must be reached.
  std::vector<std::size_t> pending(n);
  for (std::size_t i = 0; i < n; ++i) pending[i] = parents_[i].size();
  std::deque<std::size_t> queue{root_};
  std::size_t visited = 0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    ++visited;
    for (std::size_t c : children[u]) {
      if (--pending[c] == 0) queue.push_back(c);
    }
  }
  if (visited != n) throw FormatError("taxonomy contains a cycle");

  up_distance_.resize(n);
  for (std::size_t start = 0; start < n; ++start) {
    auto& dist = up_distance_[start];
    std::deque<std::size_t> q{start};
    dist[start] = 0;
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop_front();
      for (std::size_t p : parents_[u]) {
        if (!dist.count(p)) {
          dist[p] = dist[u] + 1;
          q.push_back(p);
        }
      }
    }
  }

  descendants_.assign(n, 0);
  for (std::size_t node = 0; node < n; ++node) {
    for (const auto& [ancestor, _] : up_distance_[node]) {
      if (ancestor != node) ++descendants_[ancestor];
    }
  }

  for (std::size_t c = 0; c < class_nodes_.size(); ++c) {
    if (class_nodes_[c] >= n) {
      throw MappingError("class " + std::to_string(c) + " maps to a node outside the taxonomy");
    }
  }
}

std::size_t Taxonomy::class_node(std::size_t class_index) const {
  if (class_index >= class_nodes_.size()) {
    throw MappingError("class " + std::to_string(class_index) + " is not mapped into the taxonomy");
  }
  return class_nodes_[class_index];
}

std::optional<std::size_t> Taxonomy::find_node(const std::string& name) const {
  const auto it = std::find(nodes_.begin(), nodes_.end(), name);
  if (it == nodes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - nodes_.begin());
}

void Taxonomy::check_node(std::size_t node) const {
  if (node >= nodes_.size()) throw ContractError("taxonomy node index out of range");
}

bool Taxonomy::is_ancestor(std::size_t ancestor, std::size_t node) const {
  check_node(ancestor);
  check_node(node);
  return up_distance_[node].count(ancestor) > 0;
}

double Taxonomy::information_content(std::size_t node) const {
  check_node(node);
  if (nodes_.size() < 2) throw DegenerateTaxonomyError("information content needs at least 2 nodes");
  return 1.0 - std::log(static_cast<double>(descendants_[node]) + 1.0) /
                   std::log(static_cast<double>(nodes_.size()));
}

std::size_t Taxonomy::hops(std::size_t a, std::size_t b) const {
  check_node(a);
  check_node(b);
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (const auto& [anc, da] : up_distance_[a]) {
    const auto it = up_distance_[b].find(anc);
    if (it != up_distance_[b].end()) best = std::min(best, da + it->second);
  }
  return best;  // the root is always common
}

std::size_t Taxonomy::lowest_common_subsumer(std::size_t a, std::size_t b) const {
  check_node(a);
  check_node(b);
  // Higher IC == fewer descendants; counts are compared to avoid log ties.
  // Ancestors iterate in ascending index order, so strict comparisons keep
  // the lowest index on a full tie.
  std::size_t best = root_;
  std::size_t best_desc = std::numeric_limits<std::size_t>::max();
  std::size_t best_hops = std::numeric_limits<std::size_t>::max();
  for (const auto& [anc, da] : up_distance_[a]) {
    const auto it = up_distance_[b].find(anc);
    if (it == up_distance_[b].end()) continue;
    const std::size_t desc = descendants_[anc];
    const std::size_t h = da + it->second;
    if (desc < best_desc || (desc == best_desc && h < best_hops)) {
      best = anc;
      best_desc = desc;
      best_hops = h;
    }
  }
  return best;
}

Taxonomy load_taxonomy(const std::filesystem::path& path,
                       const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open taxonomy '" + path.string() + "'");

  enum class Section { kNone, kNodes, kEdges, kClasses, kAliases };
  Section section = Section::kNone;
  std::vector<std::string> nodes;
  std::unordered_map<std::string, std::size_t> node_index;
  std::vector<std::pair<std::string, std::string>> edge_names;
  std::unordered_map<std::string, std::string> class_to_node;
  std::unordered_map<std::string, std::string> aliases;

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line == "[nodes]") section = Section::kNodes;
      else if (line == "[edges]") section = Section::kEdges;
      else if (line == "[classes]") section = Section::kClasses;
      else if (line == "[aliases]") section = Section::kAliases;
      else throw FormatError("unknown taxonomy section " + line);
      continue;
    }
    switch (section) {
      case Section::kNone:
        throw FormatError("taxonomy line " + std::to_string(line_no) + " outside any section");
      case Section::kNodes:
        if (node_index.count(line)) throw FormatError("duplicate taxonomy node '" + line + "'");
        node_index[line] = nodes.size();
        nodes.push_back(line);
        break;
      case Section::kEdges:
        edge_names.push_back(split_tab(raw, line_no));
        break;
      case Section::kClasses: {
        auto [cls, node] = split_tab(raw, line_no);
        class_to_node[cls] = node;
        break;
      }
      case Section::kAliases: {
        auto [cls, node] = split_tab(raw, line_no);
        aliases[cls] = node;
        break;
      }
    }
  }

  auto lookup = [&](const std::string& name) {
    const auto it = node_index.find(name);
    if (it == node_index.end()) throw FormatError("taxonomy references unknown node '" + name + "'");
    return it->second;
  };
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(edge_names.size());
  for (const auto& [child, parent] : edge_names) edges.emplace_back(lookup(child), lookup(parent));

  std::vector<std::size_t> class_nodes;
  class_nodes.reserve(class_names.size());
  for (const auto& cls : class_names) {
    std::string node_name;
    if (auto it = aliases.find(cls); it != aliases.end()) node_name = it->second;
    else if (auto jt = class_to_node.find(cls); jt != class_to_node.end()) node_name = jt->second;
    else if (node_index.count(cls)) node_name = cls;
    else throw MappingError("class '" + cls + "' has no taxonomy node (add it to [classes] or [aliases])");
    const auto it = node_index.find(node_name);
    if (it == node_index.end()) {
      throw MappingError("class '" + cls + "' maps to unknown node '" + node_name + "'");
    }
    class_nodes.push_back(it->second);
  }
  return Taxonomy(std::move(nodes), std::move(edges), std::move(class_nodes));
}

double intrinsic_ic(const Taxonomy& taxonomy, std::size_t node) {
  return taxonomy.information_content(node);
}

double taxonomy_similarity(const Taxonomy& taxonomy, std::size_t a, std::size_t b,
                           SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::kPath:
      return 1.0 / (1.0 + static_cast<double>(taxonomy.hops(a, b)));
    case SimilarityKind::kLin: {
      if (a == b) return 1.0;
      const double ic_a = taxonomy.information_content(a);
      const double ic_b = taxonomy.information_content(b);
      if (ic_a + ic_b == 0.0) return 0.0;
      const double ic_lcs = taxonomy.information_content(taxonomy.lowest_common_subsumer(a, b));
      return 2.0 * ic_lcs / (ic_a + ic_b);
    }
    case SimilarityKind::kJiangConrath: {
      const double ic_a = taxonomy.information_content(a);
      const double ic_b = taxonomy.information_content(b);
      const double ic_lcs = taxonomy.information_content(taxonomy.lowest_common_subsumer(a, b));
      const double distance = std::max(0.0, ic_a + ic_b - 2.0 * ic_lcs);
      return 1.0 / (1.0 + distance);
    }
  }
  throw ContractError("unknown similarity kind");
}

Eigen::VectorXd build_hier_embedding(const Taxonomy& taxonomy, std::size_t class_index,
                                     SimilarityKind kind) {
  const std::size_t node = taxonomy.class_node(class_index);
  Eigen::VectorXd out(static_cast<Eigen::Index>(taxonomy.num_nodes()));
  for (std::size_t j = 0; j < taxonomy.num_nodes(); ++j) {
    out(static_cast<Eigen::Index>(j)) = taxonomy_similarity(taxonomy, node, j, kind);
  }
  return out;
}

Eigen::MatrixXd build_hier_embeddings(const Taxonomy& taxonomy, SimilarityKind kind) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(taxonomy.num_classes()),
                      static_cast<Eigen::Index>(taxonomy.num_nodes()));
  for (std::size_t c = 0; c < taxonomy.num_classes(); ++c) {
    out.row(static_cast<Eigen::Index>(c)) = build_hier_embedding(taxonomy, c, kind).transpose();
  }
  return out;
}

}  // namespace anyshot
