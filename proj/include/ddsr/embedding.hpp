#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ddsr/common.hpp"

namespace ddsr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Item index -> embedding vector. Row i belongs to catalog item i.
struct EmbeddingTable {
  RowMatrix vectors;

  std::size_t size() const { return static_cast<std::size_t>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

/// Reads `{"item_id": ..., "vector": [...]}` lines. `index_of` maps ids to rows;
/// ids it does not know are ignored, and every index in [0, num_items) must be covered.
template <class IndexOf>
EmbeddingTable read_embeddings(const std::string& path, std::size_t num_items, IndexOf&& index_of) {
  std::ifstream in(path);
  if (!in) throw DependencyError("embeddings file not found: " + path);
  EmbeddingTable table;
  std::vector<bool> seen(num_items, false);
  std::string line;
  std::size_t line_no = 0;
  int dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, line_no, e.what());
    }
    if (!row.contains("item_id") || !row.contains("vector") || !row["vector"].is_array())
      throw ParseError(path, line_no, "expected keys item_id and vector");
    const auto& vec = row["vector"];
    if (dim < 0) {
      dim = static_cast<int>(vec.size());
      if (dim == 0) throw ParseError(path, line_no, "empty vector");
      table.vectors = RowMatrix::Zero(static_cast<Eigen::Index>(num_items), dim);
    } else if (static_cast<int>(vec.size()) != dim) {
      throw ParseError(path, line_no,
                       "vector length " + std::to_string(vec.size()) + " != " + std::to_string(dim));
    }
    const ItemIndex idx = index_of(row["item_id"].get<std::string>());
    if (idx == kNoItem) continue;
    for (int j = 0; j < dim; ++j) {
      if (!vec[j].is_number()) throw ParseError(path, line_no, "non-numeric vector entry");
      table.vectors(idx, j) = vec[j].get<double>();
    }
    seen[static_cast<std::size_t>(idx)] = true;
  }
  if (dim < 0) throw DataError("embeddings file has no rows: " + path);
  std::size_t missing = 0;
  for (bool s : seen) missing += !s;
  if (missing > 0)
    throw DataError(std::to_string(missing) + " catalog items have no embedding in " + path);
  return table;
}

inline void write_embeddings(const std::string& path, const EmbeddingTable& table,
                             const std::vector<std::string>& item_ids) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t i = 0; i < table.size(); ++i) {
    nlohmann::json row;
    row["item_id"] = item_ids[i];
    std::vector<double> v(table.vectors.row(static_cast<Eigen::Index>(i)).begin(),
                          table.vectors.row(static_cast<Eigen::Index>(i)).end());
    row["vector"] = v;
    out << row.dump() << '\n';
  }
}

}  // namespace ddsr
