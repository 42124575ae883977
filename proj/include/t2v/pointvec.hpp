#pragma once

// Located feature-vector mode: triplets of rows sampled by great-circle
// proximity, a one-hidden-layer encoder trained under the same objective,
// a sign-aligned z-score health index, and the kNN/ridge evaluation over
// learned embeddings, raw non-index features, and raw locations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "t2v/detail/text.hpp"
#include "t2v/eval.hpp"
#include "t2v/training.hpp"

namespace t2v {

struct PointDataset {
  std::vector<std::string> ids;
  std::vector<std::pair<double, double>> locations;  // (lat, lon) degrees
  std::vector<std::vector<double>> features;         // rows x p
  std::vector<std::string> feature_names;
  int imputed_cells = 0;

  int size() const { return static_cast<int>(ids.size()); }
  int dim() const { return static_cast<int>(feature_names.size()); }

  int feature_index(const std::string& name) const {
    const auto it =
        std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end())
      throw UsageError("no feature named \"" + name + "\"");
    return static_cast<int>(it - feature_names.begin());
  }

  /// Copy with the named feature columns removed.
  PointDataset without_features(const std::set<std::string>& names) const {
    PointDataset out;
    out.ids = ids;
    out.locations = locations;
    out.imputed_cells = imputed_cells;
    std::vector<int> keep;
    for (int j = 0; j < dim(); ++j)
      if (!names.contains(feature_names[j])) {
        keep.push_back(j);
        out.feature_names.push_back(feature_names[j]);
      }
    out.features.resize(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
      out.features[i].reserve(keep.size());
      for (const int j : keep) out.features[i].push_back(features[i][j]);
    }
    return out;
  }
};

struct PointTriplet {
  int anchor = 0;
  int neighbor = 0;
  int distant = 0;
};

struct IndexSpec {
  std::vector<std::pair<std::string, int>> features;  // (name, +1 or -1)

  void validate(const PointDataset& data) const {
    std::set<std::string> seen;
    for (const auto& [name, sign] : features) {
      if (sign != 1 && sign != -1)
        throw UsageError("index sign for \"" + name + "\" must be +1 or -1");
      if (!seen.insert(name).second)
        throw UsageError("index feature \"" + name + "\" listed twice");
      data.feature_index(name);
    }
    if (features.empty()) throw UsageError("index spec is empty");
  }

  std::set<std::string> names() const {
    std::set<std::string> out;
    for (const auto& [name, sign] : features) out.insert(name);
    return out;
  }
};

// --------------------------------------------------------------------------
// Point CSV and index-spec files
// --------------------------------------------------------------------------

/// CSV with header id,lat,lon,<feature names...>. Empty feature cells are
/// imputed with the column median of the present values.
inline PointDataset load_points_text(const std::string& bytes,
                                     const std::string& context) {
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line)) throw DataError(context + ": empty file");
  const std::vector<std::string> header = detail::split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "lat" ||
      header[2] != "lon")
    throw DataError(context + ": header must start with id,lat,lon");

  PointDataset data;
  data.feature_names.assign(header.begin() + 3, header.end());
  const int p = data.dim();
  std::set<std::string> seen_ids;
  std::vector<std::vector<std::size_t>> missing(p);

  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = detail::split_csv(line);
    if (static_cast<int>(fields.size()) != 3 + p)
      throw DataError(context + ": row has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(3 + p));
    if (fields[0].empty()) throw DataError(context + ": empty id");
    if (!seen_ids.insert(fields[0]).second)
      throw DataError(context + ": duplicate id \"" + fields[0] + "\"");
    data.ids.push_back(fields[0]);
    const double lat = detail::parse_double(fields[1], "lat", context);
    const double lon = detail::parse_double(fields[2], "lon", context);
    if (std::abs(lat) > 90 || std::abs(lon) > 180)
      throw DataError(context + ": location out of range for id \"" +
                      fields[0] + "\"");
    data.locations.emplace_back(lat, lon);
    std::vector<double> row(p);
    for (int j = 0; j < p; ++j) {
      if (fields[3 + j].empty()) {
        missing[j].push_back(data.features.size());
        row[j] = std::numeric_limits<double>::quiet_NaN();
      } else {
        row[j] = detail::parse_double(fields[3 + j],
                                      "feature " + data.feature_names[j],
                                      context);
      }
    }
    data.features.push_back(std::move(row));
  }

  for (int j = 0; j < p; ++j) {
    if (missing[j].empty()) continue;
    std::vector<double> present;
    for (const auto& row : data.features)
      if (!std::isnan(row[j])) present.push_back(row[j]);
    if (present.empty())
      throw DataError(context + ": feature \"" + data.feature_names[j] +
                      "\" has no values to impute from");
    std::sort(present.begin(), present.end());
    const std::size_t n = present.size();
    const double median = n % 2 ? present[n / 2]
                                : 0.5 * (present[n / 2 - 1] + present[n / 2]);
    for (const std::size_t i : missing[j]) data.features[i][j] = median;
    data.imputed_cells += static_cast<int>(missing[j].size());
  }
  return data;
}

inline PointDataset load_points(const std::string& path) {
  return load_points_text(detail::read_file_bytes(path), path);
}

inline std::string serialize_points(const PointDataset& data) {
  std::string out = "id,lat,lon";
  for (const std::string& name : data.feature_names) out += "," + name;
  out += "\n";
  for (int i = 0; i < data.size(); ++i) {
    out += data.ids[i] + "," + detail::format_double(data.locations[i].first) +
           "," + detail::format_double(data.locations[i].second);
    for (const double v : data.features[i])
      out += "," + detail::format_double(v);
    out += "\n";
  }
  return out;
}

/// One line per index feature: "name,sign" with sign +1 or -1.
inline IndexSpec load_index_spec(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  std::istringstream in(bytes);
  std::string line;
  IndexSpec spec;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const std::vector<std::string> fields = detail::split_csv(line);
    if (fields.size() != 2)
      throw DataError(path + ": index spec line needs \"name,sign\": \"" +
                      line + "\"");
    spec.features.emplace_back(
        fields[0],
        static_cast<int>(detail::parse_long(fields[1], "sign", path)));
  }
  return spec;
}

// --------------------------------------------------------------------------
// Geometry and triplet sampling
// --------------------------------------------------------------------------

/// Haversine great-circle distance in kilometers.
inline double great_circle_km(double lat1, double lon1, double lat2,
                              double lon2) {
  constexpr double kEarthRadiusKm = 6371.0088;
  const double rad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * rad;
  const double dlon = (lon2 - lon1) * rad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * rad) * std::cos(lat2 * rad) *
                       std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

/// Row indices of the k nearest points to `anchor` by great-circle
/// distance, distance ties broken by lower index.
inline std::vector<int> k_nearest_points(const PointDataset& data, int anchor,
                                         int k) {
  std::vector<std::pair<double, int>> dists;
  dists.reserve(data.size() - 1);
  for (int i = 0; i < data.size(); ++i) {
    if (i == anchor) continue;
    dists.emplace_back(
        great_circle_km(data.locations[anchor].first,
                        data.locations[anchor].second,
                        data.locations[i].first, data.locations[i].second),
        i);
  }
  std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) out[i] = dists[i].second;
  return out;
}

/// Anchor uniform over rows; neighbor uniform among the anchor's k nearest;
/// distant uniform among the remainder. Per-triplet substreams keep the
/// result independent of evaluation order.
inline std::vector<PointTriplet> sample_point_triplets(
    const PointDataset& data, long count, int k, std::uint64_t seed) {
  if (count < 0) throw UsageError("triplet count must be >= 0");
  if (k < 1) throw UsageError("k must be >= 1");
  const int n = data.size();
  if (n < k + 2)
    throw UsageError("need at least k+2 rows, have " + std::to_string(n));

  std::vector<std::vector<int>> nearest(n);
  std::vector<std::vector<int>> remainder(n);
  for (int i = 0; i < n; ++i) {
    nearest[i] = k_nearest_points(data, i, k);
    std::vector<bool> excluded(n, false);
    excluded[i] = true;
    for (const int j : nearest[i]) excluded[j] = true;
    for (int j = 0; j < n; ++j)
      if (!excluded[j]) remainder[i].push_back(j);
  }

  std::vector<PointTriplet> triplets(static_cast<std::size_t>(count));
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    Rng rng(seed, t);
    PointTriplet& triplet = triplets[t];
    triplet.anchor = static_cast<int>(rng.uniform_below(n));
    triplet.neighbor =
        nearest[triplet.anchor][rng.uniform_below(k)];
    const std::vector<int>& pool = remainder[triplet.anchor];
    triplet.distant = pool[rng.uniform_below(pool.size())];
  }
  return triplets;
}

inline std::string serialize_point_triplets(
    const std::vector<PointTriplet>& triplets, int k, std::uint64_t seed) {
  std::string out = "#t2v-point-triplets v1\n";
  out += "#k=" + std::to_string(k) + "\n";
  out += "#seed=" + std::to_string(seed) + "\n";
  for (const PointTriplet& t : triplets)
    out += std::to_string(t.anchor) + "," + std::to_string(t.neighbor) + "," +
           std::to_string(t.distant) + "\n";
  return out;
}

// --------------------------------------------------------------------------
// Health index
// --------------------------------------------------------------------------

struct HealthIndex {
  std::vector<double> values;           // one per row
  std::vector<std::string> warnings;    // excluded zero-variance features
};

/// Mean over the index features of sign * z-score(feature); z-scores use
/// population statistics over the whole dataset. Zero-variance features are
/// excluded with a warning.
inline HealthIndex health_index(const PointDataset& data,
                                const IndexSpec& spec) {
  spec.validate(data);
  const int n = data.size();
  HealthIndex out;
  out.values.assign(n, 0.0);
  int used = 0;
  for (const auto& [name, sign] : spec.features) {
    const int j = data.feature_index(name);
    double mean = 0;
    for (int i = 0; i < n; ++i) mean += data.features[i][j];
    mean /= n;
    double var = 0;
    for (int i = 0; i < n; ++i) {
      const double d = data.features[i][j] - mean;
      var += d * d;
    }
    var /= n;
    const double stddev = std::sqrt(var);
    if (stddev < 1e-12) {
      out.warnings.push_back("feature \"" + name +
                             "\" has zero variance; excluded from the index");
      continue;
    }
    for (int i = 0; i < n; ++i)
      out.values[i] += sign * (data.features[i][j] - mean) / stddev;
    ++used;
  }
  if (used > 0)
    for (double& v : out.values) v /= static_cast<double>(used);
  return out;
}

// --------------------------------------------------------------------------
// Encoder training over points
// --------------------------------------------------------------------------

/// Population per-column statistics, stddev floored at 1e-6.
inline BandStats column_stats(const PointDataset& data) {
  const int p = data.dim();
  const int n = data.size();
  if (n == 0) throw UsageError("column_stats: empty dataset");
  BandStats stats;
  stats.mean.assign(p, 0.0);
  stats.stddev.assign(p, 0.0);
  for (int j = 0; j < p; ++j) {
    double mean = 0;
    for (int i = 0; i < n; ++i) mean += data.features[i][j];
    mean /= n;
    double var = 0;
    for (int i = 0; i < n; ++i) {
      const double d = data.features[i][j] - mean;
      var += d * d;
    }
    var /= n;
    stats.mean[j] = mean;
    stats.stddev[j] = std::max(std::sqrt(var), 1e-6);
  }
  return stats;
}

template <typename T = double>
struct PointEncoder {
  EncoderParams<T> params;
  EncoderConfig config;  // mlp kind; input_stats holds the column stats
};

namespace detail {

inline std::vector<PointTriplet> recombine_point_batch(
    const std::vector<PointTriplet>& batch, Augmentation mode, Rng& rng) {
  if (mode == Augmentation::off) return batch;
  const std::size_t b = batch.size();
  if (b < 2)
    throw UsageError("recombination needs a batch of at least 2 triplets");
  std::vector<PointTriplet> out;
  if (mode == Augmentation::shuffle) {
    const std::vector<std::size_t> perm = rng.cyclic_derangement(b);
    out.reserve(b);
    for (std::size_t i = 0; i < b; ++i)
      out.push_back(PointTriplet{batch[i].anchor, batch[i].neighbor,
                                 batch[perm[i]].distant});
    return out;
  }
  out.reserve(3 * b * (b - 1));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      out.push_back(
          PointTriplet{batch[i].anchor, batch[i].neighbor, batch[j].anchor});
      out.push_back(
          PointTriplet{batch[i].anchor, batch[i].neighbor, batch[j].neighbor});
      out.push_back(
          PointTriplet{batch[i].anchor, batch[i].neighbor, batch[j].distant});
    }
  return out;
}

}  // namespace detail

/// One-hidden-layer encoder trained under the triplet objective on
/// standardized feature vectors. Mirrors the tile training loop.
template <typename T = double>
std::pair<PointEncoder<T>, TrainReport> train_point_encoder(
    const PointDataset& data, const std::vector<PointTriplet>& triplets,
    int hidden_dim, int embed_dim, const TrainConfig& train_config,
    const EpochCallback& on_epoch = nullptr) {
  train_config.validate();
  PointEncoder<T> encoder;
  encoder.config =
      mlp_config(data.dim(), hidden_dim, embed_dim, train_config.seed);
  encoder.config.input_stats = column_stats(data);
  const ParamLayout layout = param_layout(encoder.config);
  encoder.params = init_encoder<T>(encoder.config);

  TrainReport report;
  if (triplets.empty() || train_config.epochs == 0)
    return {std::move(encoder), report};

  // standardize every row once
  std::vector<std::vector<T>> rows(data.size());
  for (int i = 0; i < data.size(); ++i)
    detail::standardize_features(data.features[i],
                                 *encoder.config.input_stats, rows[i]);

  AdamState<T> adam = make_adam_state<T>(layout.total);
  std::vector<std::size_t> order(triplets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed =
        substream_seed(train_config.seed, static_cast<std::uint64_t>(epoch));
    Rng shuffle_rng(epoch_seed, 0);
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    long consumed = 0;
    const std::size_t bs = static_cast<std::size_t>(train_config.batch_size);
    for (std::size_t begin = 0, batch_idx = 0; begin < order.size();
         begin += bs, ++batch_idx) {
      const std::size_t end = std::min(order.size(), begin + bs);
      std::vector<PointTriplet> batch;
      for (std::size_t i = begin; i < end; ++i)
        batch.push_back(triplets[order[i]]);
      Rng recombine_rng(epoch_seed, 1 + batch_idx);
      const std::vector<PointTriplet> effective =
          (train_config.augmentation == Augmentation::off || batch.size() < 2)
              ? batch
              : detail::recombine_point_batch(
                    batch, train_config.augmentation, recombine_rng);
      std::vector<detail::TripletInputs<T>> inputs(effective.size());
      for (std::size_t i = 0; i < effective.size(); ++i) {
        inputs[i].anchor = rows[effective[i].anchor];
        inputs[i].neighbor = rows[effective[i].neighbor];
        inputs[i].distant = rows[effective[i].distant];
      }
      EncoderParams<T> grads;
      const double batch_loss = detail::triplet_batch_gradients(
          encoder.params, layout, encoder.config, inputs, train_config.margin,
          train_config.lambda, grads, train_config.workers);
      adam_step(encoder.params, grads, adam, train_config);
      epoch_loss += batch_loss;
      consumed += static_cast<long>(effective.size());
    }
    EpochStats row;
    row.mean_loss = epoch_loss / static_cast<double>(consumed);
    row.triplets_seen = consumed;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    report.epochs.push_back(row);
    if (on_epoch) on_epoch(epoch, row);
  }
  return {std::move(encoder), report};
}

/// Embeds every row of `data` through the point encoder. Row order and ids
/// follow the dataset.
template <typename T = double>
EmbeddingTable embed_points(const PointDataset& data,
                            const PointEncoder<T>& encoder) {
  if (data.dim() != encoder.config.in_dim)
    throw UsageError("dataset feature count does not match encoder input");
  if (!encoder.config.input_stats)
    throw UsageError("point encoder has no stored column stats");
  EmbeddingTable table;
  table.rows.resize(data.size());
  for (int i = 0; i < data.size(); ++i) {
    const Embedding e = encode_point(encoder.params, encoder.config,
                                     data.features[i],
                                     *encoder.config.input_stats);
    EmbeddingRow& row = table.rows[i];
    row.id = i;
    row.values = e.values;
  }
  return table;
}

// --------------------------------------------------------------------------
// Evaluation
// --------------------------------------------------------------------------

struct PointEvalRow {
  std::string feature_set;  // "embeddings", "non_index", "locations"
  std::string model;        // "knn" or "ridge"
  std::string hyperparameter;
  double mean_r2 = 0;
  double stddev = 0;
};

struct PointEvalReport {
  std::vector<PointEvalRow> rows;
  std::vector<std::pair<std::string, std::string>> grid_echo;
  std::vector<std::string> warnings;

  const PointEvalRow& find(const std::string& feature_set,
                           const std::string& model) const {
    for (const PointEvalRow& row : rows)
      if (row.feature_set == feature_set && row.model == model) return row;
    throw UsageError("no evaluation row for " + feature_set + "/" + model);
  }
};

namespace detail {

inline RegressionReport cv_regression(const EmbeddingTable& table,
                                      const ModelSpec& spec, int folds,
                                      int trials, std::uint64_t seed) {
  return std::get<RegressionReport>(
      cross_validate(table, spec, folds, trials, seed));
}

}  // namespace detail

/// Cross-validated kNN and ridge regression of the index value over three
/// feature sets: learned embeddings, raw non-index features, and raw
/// locations. Hyperparameters are tuned per feature set over a fixed grid
/// (selection by mean r2 under the same folds); the grid is echoed in the
/// report.
template <typename T = double>
PointEvalReport evaluate_point_embeddings(const PointDataset& data,
                                          const PointEncoder<T>& encoder,
                                          const IndexSpec& spec,
                                          int folds = 3, int trials = 10,
                                          std::uint64_t seed = 0) {
  spec.validate(data);
  const HealthIndex index = health_index(data, spec);
  const PointDataset restricted = data.without_features(spec.names());
  if (restricted.dim() != encoder.config.in_dim)
    throw UsageError("encoder input dim " +
                     std::to_string(encoder.config.in_dim) +
                     " does not match non-index feature count " +
                     std::to_string(restricted.dim()));

  auto with_targets = [&](EmbeddingTable table) {
    for (int i = 0; i < data.size(); ++i)
      table.rows[i].target = index.values[i];
    return table;
  };

  EmbeddingTable embeddings = with_targets(embed_points(restricted, encoder));
  EmbeddingTable raw;
  raw.rows.resize(data.size());
  EmbeddingTable locations;
  locations.rows.resize(data.size());
  for (int i = 0; i < data.size(); ++i) {
    raw.rows[i].id = i;
    raw.rows[i].values = restricted.features[i];
    locations.rows[i].id = i;
    locations.rows[i].values = {data.locations[i].first,
                                data.locations[i].second};
  }
  raw = with_targets(std::move(raw));
  locations = with_targets(std::move(locations));

  const std::vector<int> k_grid = {1, 3, 5, 10, 20};
  const std::vector<double> alpha_grid = {1e-4, 1e-3, 1e-2, 1e-1,
                                          1.0,  1e1,  1e2,  1e3};
  const int max_k =
      static_cast<int>(data.size() - (data.size() + folds - 1) / folds);

  PointEvalReport report;
  report.warnings = index.warnings;
  report.grid_echo = {
      {"folds", std::to_string(folds)},
      {"trials", std::to_string(trials)},
      {"seed", std::to_string(seed)},
      {"k_grid", "1,3,5,10,20"},
      {"alpha_grid", "1e-4..1e3 (decades)"},
  };

  const std::vector<std::pair<std::string, const EmbeddingTable*>> sets = {
      {"embeddings", &embeddings},
      {"non_index", &raw},
      {"locations", &locations}};
  for (const auto& [name, table] : sets) {
    PointEvalRow best_knn{name, "knn", "", -std::numeric_limits<double>::infinity(), 0};
    for (const int k : k_grid) {
      if (k > max_k) continue;
      const RegressionReport r = detail::cv_regression(
          *table, KnnRegressorSpec{k}, folds, trials, seed);
      if (r.mean > best_knn.mean_r2) {
        best_knn.mean_r2 = r.mean;
        best_knn.stddev = r.stddev;
        best_knn.hyperparameter = "k=" + std::to_string(k);
      }
    }
    report.rows.push_back(best_knn);

    PointEvalRow best_ridge{name, "ridge", "", -std::numeric_limits<double>::infinity(), 0};
    for (const double alpha : alpha_grid) {
      const RegressionReport r = detail::cv_regression(
          *table, RidgeSpec{alpha}, folds, trials, seed);
      if (r.mean > best_ridge.mean_r2) {
        best_ridge.mean_r2 = r.mean;
        best_ridge.stddev = r.stddev;
        best_ridge.hyperparameter = "alpha=" + detail::format_double(alpha);
      }
    }
    report.rows.push_back(best_ridge);
  }
  return report;
}

}  // namespace t2v
