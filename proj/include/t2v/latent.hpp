#pragma once

// Latent-space queries over an embedding table: exact nearest neighbors,
// linear interpolation between embeddings, and analogy arithmetic. All
// retrieval uses Euclidean distance.

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "t2v/eval.hpp"

namespace t2v {

struct QueryHit {
  long id = 0;
  int x = 0;
  int y = 0;
  double distance = 0;
};

struct QueryResult {
  std::vector<double> query;
  std::vector<QueryHit> hits;  // distances non-decreasing
};

/// Exact k smallest Euclidean distances, with excluded ids removed first.
/// Distance ties order by id.
inline QueryResult nearest(const EmbeddingTable& table,
                           std::span<const double> query, int k,
                           const std::set<long>& exclude = {}) {
  if (k <= 0) throw UsageError("nearest: k must be positive");
  if (table.rows.empty()) throw UsageError("nearest: empty table");
  QueryResult result;
  result.query.assign(query.begin(), query.end());
  std::vector<QueryHit> all;
  all.reserve(table.rows.size());
  for (const EmbeddingRow& row : table.rows) {
    if (exclude.contains(row.id)) continue;
    all.push_back(QueryHit{row.id, row.x, row.y,
                           euclidean_distance(query, row.values)});
  }
  const std::size_t take = std::min<std::size_t>(k, all.size());
  std::partial_sort(all.begin(), all.begin() + take, all.end(),
                    [](const QueryHit& a, const QueryHit& b) {
                      if (a.distance != b.distance)
                        return a.distance < b.distance;
                      return a.id < b.id;
                    });
  all.resize(take);
  result.hits = std::move(all);
  return result;
}

inline QueryResult nearest(const EmbeddingTable& table, const Embedding& query,
                           int k, const std::set<long>& exclude = {}) {
  return nearest(table, std::span<const double>(query.values), k, exclude);
}

/// steps points z1 + i/(steps-1) * (z2 - z1), endpoints included.
inline std::vector<Embedding> interpolate(const Embedding& z1,
                                          const Embedding& z2, int steps) {
  if (steps < 2) throw UsageError("interpolate: steps must be >= 2");
  if (z1.values.size() != z2.values.size())
    throw UsageError("interpolate: dimension mismatch");
  std::vector<Embedding> out(steps);
  for (int i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / (steps - 1);
    out[i].values.resize(z1.values.size());
    for (std::size_t j = 0; j < z1.values.size(); ++j)
      out[i].values[j] = z1.values[j] + t * (z2.values[j] - z1.values[j]);
  }
  return out;
}

/// z1 + z2 - z3; retrieve matches for the result via nearest().
inline Embedding analogy(const Embedding& z1, const Embedding& z2,
                         const Embedding& z3) {
  if (z1.values.size() != z2.values.size() ||
      z1.values.size() != z3.values.size())
    throw UsageError("analogy: dimension mismatch");
  Embedding out;
  out.values.resize(z1.values.size());
  for (std::size_t j = 0; j < z1.values.size(); ++j)
    out.values[j] = z1.values[j] + z2.values[j] - z3.values[j];
  return out;
}

inline void export_embeddings(const EmbeddingTable& table,
                              const std::string& path) {
  write_embedding_table(table, path);
}

}  // namespace t2v
