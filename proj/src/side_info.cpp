#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "anyshot/checkpoint.hpp"
#include "anyshot/errors.hpp"
#include "anyshot/side_info.hpp"

namespace anyshot {
namespace {

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return s;
}

}  // namespace

std::vector<std::string> class_name_tokens(const std::string& class_name) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : class_name) {
    if (ch == ' ' || ch == '-' || ch == '_') {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Eigen::MatrixXd load_word_vectors(const std::filesystem::path& path,
                                  const std::vector<std::string>& class_names) {
  // Only tokens that some class can use are kept, so large vocabularies
  // stream through without being materialized.
  std::unordered_set<std::string> wanted;
  for (const auto& name : class_names) {
    wanted.insert(name);
    wanted.insert(lowercase(name));
    for (const auto& tok : class_name_tokens(name)) {
      wanted.insert(tok);
      wanted.insert(lowercase(tok));
    }
  }

  std::ifstream in(path);
  if (!in) throw IoError("cannot open word-vector file '" + path.string() + "'");
  std::unordered_map<std::string, Eigen::VectorXd> vectors;
  std::ptrdiff_t width = -1;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    values.clear();
    std::string field;
    while (fields >> field) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw FormatError("word-vector line " + std::to_string(line_no) + ": bad value '" + field + "'");
      }
      values.push_back(v);
    }
    if (values.empty()) throw FormatError("word-vector line " + std::to_string(line_no) + " has no values");
    if (width < 0) width = static_cast<std::ptrdiff_t>(values.size());
    if (static_cast<std::ptrdiff_t>(values.size()) != width) {
      throw FormatError("word-vector line " + std::to_string(line_no) + " has " +
                        std::to_string(values.size()) + " values, expected " + std::to_string(width));
    }
    if (wanted.count(token) && !vectors.count(token)) {
      vectors.emplace(token, Eigen::Map<const Eigen::VectorXd>(values.data(), width));
    }
  }
  if (width < 0) throw FormatError("word-vector file '" + path.string() + "' is empty");

  auto find = [&](const std::string& key) -> const Eigen::VectorXd* {
    if (auto it = vectors.find(key); it != vectors.end()) return &it->second;
    if (auto it = vectors.find(lowercase(key)); it != vectors.end()) return &it->second;
    return nullptr;
  };

  Eigen::MatrixXd out(static_cast<Eigen::Index>(class_names.size()), width);
  std::vector<std::string> missing;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto row = static_cast<Eigen::Index>(c);
    if (const auto* whole = find(class_names[c])) {
      out.row(row) = whole->transpose();
      continue;
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(width);
    int found = 0;
    for (const auto& tok : class_name_tokens(class_names[c])) {
      if (const auto* v = find(tok)) {
        sum += *v;
        ++found;
      }
    }
    if (found == 0) {
      missing.push_back(class_names[c]);
      continue;
    }
    out.row(row) = (sum / found).transpose();
  }
  if (!missing.empty()) {
    std::string msg = "no word vector for class(es):";
    for (const auto& m : missing) msg += " " + m;
    throw MissingEmbeddingError(msg);
  }
  return out;
}

ClassEmbeddingTable fuse_side_info(const Eigen::MatrixXd& text, const Eigen::MatrixXd& hier) {
  if (text.rows() != hier.rows()) {
    throw ShapeError("text and hierarchical side information cover " + std::to_string(text.rows()) +
                     " vs " + std::to_string(hier.rows()) + " classes");
  }
  if (!text.allFinite() || !hier.allFinite()) throw NumericError("non-finite side information");
  ClassEmbeddingTable table;
  table.text = text;
  table.hier = hier;
  table.fused.resize(text.rows(), text.cols() + hier.cols());
  table.fused << text, hier;
  return table;
}

ClassEmbeddingTable select_dimensions(const ClassEmbeddingTable& table,
                                      std::span<const std::size_t> kept_columns) {
  const auto text_width = static_cast<std::size_t>(table.text.cols());
  std::vector<Eigen::Index> text_cols, hier_cols;
  std::size_t prev = 0;
  bool first = true;
  for (std::size_t col : kept_columns) {
    if (col >= table.dim()) throw ShapeError("side-information column out of range");
    if (!first && col <= prev) throw ContractError("kept columns must be strictly ascending");
    first = false;
    prev = col;
    if (col < text_width) text_cols.push_back(static_cast<Eigen::Index>(col));
    else hier_cols.push_back(static_cast<Eigen::Index>(col - text_width));
  }
  return fuse_side_info(table.text(Eigen::all, text_cols), table.hier(Eigen::all, hier_cols));
}

void write_side_info(const ClassEmbeddingTable& table, const std::filesystem::path& path) {
  TensorArchive archive;
  archive.put_matrix("side.text", table.text);
  archive.put_matrix("side.hier", table.hier);
  write_checkpoint(archive, path);
}

ClassEmbeddingTable read_side_info(const std::filesystem::path& path) {
  const TensorArchive archive = read_checkpoint(path);
  return fuse_side_info(archive.matrix("side.text"), archive.matrix("side.hier"));
}

}  // namespace anyshot
