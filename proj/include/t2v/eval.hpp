#pragma once

// Downstream evaluation of embeddings: exact kNN, multinomial logistic
// regression, nearest centroid, pixel-space PCA and k-means baselines,
// closed-form ridge regression, seeded cross-validation, and the
// cluster-averaged embedding pipeline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "t2v/detail/text.hpp"
#include "t2v/encoder.hpp"
#include "t2v/raster.hpp"
#include "t2v/rng.hpp"

namespace t2v {

// --------------------------------------------------------------------------
// Embedding tables
// --------------------------------------------------------------------------

struct EmbeddingRow {
  long id = 0;
  int x = 0;
  int y = 0;
  std::vector<double> values;
  std::optional<int> label;
  std::optional<double> target;
};

struct EmbeddingTable {
  std::vector<EmbeddingRow> rows;

  int dim() const {
    return rows.empty() ? 0 : static_cast<int>(rows.front().values.size());
  }

  void validate() const {
    std::set<long> ids;
    for (const EmbeddingRow& row : rows) {
      if (static_cast<int>(row.values.size()) != dim())
        throw DataError("embedding table has mixed dimensions");
      if (!ids.insert(row.id).second)
        throw DataError("duplicate embedding id " + std::to_string(row.id));
      for (const double v : row.values)
        if (!std::isfinite(v))
          throw NumericError("non-finite embedding value in row " +
                             std::to_string(row.id));
    }
  }
};

/// CSV: header id,x,y,label,target,e0..e{d-1}; empty cells mark absent
/// label/target. Values are written with round-trip-exact formatting.
inline std::string serialize_embedding_table(const EmbeddingTable& table) {
  std::string out = "id,x,y,label,target";
  for (int j = 0; j < table.dim(); ++j)
    out += ",e" + std::to_string(j);
  out += "\n";
  for (const EmbeddingRow& row : table.rows) {
    out += std::to_string(row.id) + "," + std::to_string(row.x) + "," +
           std::to_string(row.y) + ",";
    if (row.label) out += std::to_string(*row.label);
    out += ",";
    if (row.target) out += detail::format_double(*row.target);
    for (const double v : row.values) out += "," + detail::format_double(v);
    out += "\n";
  }
  return out;
}

inline void write_embedding_table(const EmbeddingTable& table,
                                  const std::string& path) {
  detail::write_file_bytes(path, serialize_embedding_table(table));
}

inline EmbeddingTable read_embedding_table(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line))
    throw DataError(path + ": empty embedding table file");
  const std::vector<std::string> header = detail::split_csv(line);
  if (header.size() < 5 || header[0] != "id" || header[1] != "x" ||
      header[2] != "y" || header[3] != "label" || header[4] != "target")
    throw DataError(path + ": unexpected embedding table header");
  const int dim = static_cast<int>(header.size()) - 5;

  EmbeddingTable table;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = detail::split_csv(line);
    if (static_cast<int>(fields.size()) != 5 + dim)
      throw DataError(path + ": row has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(5 + dim));
    EmbeddingRow row;
    row.id = detail::parse_long(fields[0], "id", path);
    row.x = static_cast<int>(detail::parse_long(fields[1], "x", path));
    row.y = static_cast<int>(detail::parse_long(fields[2], "y", path));
    if (!fields[3].empty())
      row.label = static_cast<int>(detail::parse_long(fields[3], "label", path));
    if (!fields[4].empty())
      row.target = detail::parse_double(fields[4], "target", path);
    row.values.reserve(dim);
    for (int j = 0; j < dim; ++j)
      row.values.push_back(
          detail::parse_double(fields[5 + j], "embedding value", path));
    table.rows.push_back(std::move(row));
  }
  table.validate();
  return table;
}

// --------------------------------------------------------------------------
// Reports
// --------------------------------------------------------------------------

namespace detail {

inline std::pair<double, double> mean_stddev(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0;
  for (const double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (const double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace detail

struct EvalReport {
  std::string metric = "accuracy";
  std::vector<double> per_trial;
  double mean = 0;
  double stddev = 0;
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::vector<std::string> warnings;

  void finalize() {
    const auto [m, s] = detail::mean_stddev(per_trial);
    mean = m;
    stddev = s;
  }
};

struct RegressionReport {
  std::vector<double> per_fold_r2;  // trial-major
  std::vector<double> per_trial_r2;
  double mean = 0;
  double stddev = 0;
  std::vector<double> coefficient_norms;  // one per fold fit
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::vector<std::string> warnings;

  void finalize() {
    const auto [m, s] = detail::mean_stddev(per_trial_r2);
    mean = m;
    stddev = s;
    for (const double r : per_fold_r2)
      if (r > 1.0 + 1e-12)
        throw NumericError("per-fold r2 exceeds 1");
  }
};

// --------------------------------------------------------------------------
// Metrics
// --------------------------------------------------------------------------

inline double accuracy(const std::vector<int>& predicted,
                       const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw UsageError("accuracy: prediction/truth size mismatch");
  long hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// 1 - SS_res/SS_tot with SS_tot about the mean of `truth` (the evaluated
/// fold). Degenerate constant targets give 1 for a perfect fit, otherwise
/// -inf.
inline double r2(const std::vector<double>& predicted,
                 const std::vector<double>& truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw UsageError("r2: prediction/truth size mismatch");
  double mean = 0;
  for (const double t : truth) mean += t;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0)
    return ss_res == 0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - ss_res / ss_tot;
}

// --------------------------------------------------------------------------
// Classifiers
// --------------------------------------------------------------------------

namespace detail {

inline void require_labels(const EmbeddingTable& table, const char* who) {
  for (const EmbeddingRow& row : table.rows)
    if (row.label)
      return;
  throw UsageError(std::string(who) + ": table has no labeled rows");
}

inline std::vector<const EmbeddingRow*> labeled_rows(
    const EmbeddingTable& table) {
  std::vector<const EmbeddingRow*> out;
  for (const EmbeddingRow& row : table.rows)
    if (row.label) out.push_back(&row);
  return out;
}

}  // namespace detail

/// Majority vote among the k nearest train rows (exact brute-force search).
/// Neighbor order and vote ties are deterministic: neighbors sort by
/// (distance, id); vote ties break by summed distance, then lowest class id.
inline std::vector<int> knn_predict(const EmbeddingTable& train,
                                    const EmbeddingTable& test, int k) {
  const auto train_rows = detail::labeled_rows(train);
  if (train_rows.empty()) throw UsageError("knn: no labeled train rows");
  if (k < 1 || static_cast<std::size_t>(k) > train_rows.size())
    throw UsageError("knn: k=" + std::to_string(k) + " with " +
                     std::to_string(train_rows.size()) + " train rows");
  std::vector<int> predictions;
  predictions.reserve(test.rows.size());
  std::vector<std::pair<double, const EmbeddingRow*>> dists(train_rows.size());
  for (const EmbeddingRow& q : test.rows) {
    for (std::size_t i = 0; i < train_rows.size(); ++i)
      dists[i] = {euclidean_distance(q.values, train_rows[i]->values),
                  train_rows[i]};
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first < b.first;
                        return a.second->id < b.second->id;
                      });
    std::map<int, std::pair<int, double>> votes;  // class -> (count, dist sum)
    for (int i = 0; i < k; ++i) {
      auto& v = votes[*dists[i].second->label];
      v.first += 1;
      v.second += dists[i].first;
    }
    int best_class = -1;
    int best_count = -1;
    double best_sum = 0;
    for (const auto& [cls, v] : votes) {
      const auto& [count, sum] = v;
      if (count > best_count ||
          (count == best_count && sum < best_sum)) {
        best_class = cls;
        best_count = count;
        best_sum = sum;
      }  // equal count and sum: the map iterates ascending, keep lowest id
    }
    predictions.push_back(best_class);
  }
  return predictions;
}

inline EvalReport knn_classify(const EmbeddingTable& train,
                               const EmbeddingTable& test, int k) {
  const std::vector<int> pred = knn_predict(train, test, k);
  std::vector<int> pred_labeled, truth;
  for (std::size_t i = 0; i < test.rows.size(); ++i)
    if (test.rows[i].label) {
      pred_labeled.push_back(pred[i]);
      truth.push_back(*test.rows[i].label);
    }
  EvalReport report;
  report.metric = "accuracy";
  report.config_echo = {{"classifier", "knn"}, {"k", std::to_string(k)}};
  report.per_trial = {accuracy(pred_labeled, truth)};
  report.finalize();
  return report;
}

/// Multinomial softmax classifier with unpenalized bias.
struct LinearClassifier {
  std::vector<int> class_ids;   // dense index -> class id
  std::vector<double> weights;  // K x p, row-major
  std::vector<double> bias;     // K
  int iterations = 0;
  double final_grad_norm = 0;

  int predict(std::span<const double> features) const {
    const int classes = static_cast<int>(class_ids.size());
    const int p = static_cast<int>(features.size());
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) {
      double score = bias[c];
      for (int j = 0; j < p; ++j) score += weights[c * p + j] * features[j];
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    return class_ids[best];
  }
};

namespace detail {

struct LogisticObjective {
  const std::vector<const EmbeddingRow*>& rows;
  const std::vector<int>& dense_labels;
  int classes;
  int p;
  double l2;

  /// Mean NLL + l2/2 * ||W||^2 (bias unpenalized). Gradient optional.
  double operator()(const std::vector<double>& theta,
                    std::vector<double>* grad) const {
    const std::size_t n = rows.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    if (grad) grad->assign(theta.size(), 0.0);
    const double* w = theta.data();
    const double* b = theta.data() + static_cast<std::size_t>(classes) * p;
    double loss = 0;
    std::vector<double> logits(classes);
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double>& x = rows[i]->values;
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < classes; ++c) {
        double acc = b[c];
        for (int j = 0; j < p; ++j) acc += w[c * p + j] * x[j];
        logits[c] = acc;
        max_logit = std::max(max_logit, acc);
      }
      double z = 0;
      for (int c = 0; c < classes; ++c) {
        logits[c] = std::exp(logits[c] - max_logit);
        z += logits[c];
      }
      const int label = dense_labels[i];
      loss += -std::log(std::max(logits[label] / z, 1e-300));
      if (grad) {
        double* gw = grad->data();
        double* gb = grad->data() + static_cast<std::size_t>(classes) * p;
        for (int c = 0; c < classes; ++c) {
          const double delta =
              (logits[c] / z - (c == label ? 1.0 : 0.0)) * inv_n;
          gb[c] += delta;
          for (int j = 0; j < p; ++j) gw[c * p + j] += delta * x[j];
        }
      }
    }
    loss *= inv_n;
    double penalty = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(classes) * p; ++i)
      penalty += theta[i] * theta[i];
    loss += 0.5 * l2 * penalty;
    if (grad)
      for (std::size_t i = 0; i < static_cast<std::size_t>(classes) * p; ++i)
        (*grad)[i] += l2 * theta[i];
    return loss;
  }
};

}  // namespace detail

/// Full-batch gradient descent with Armijo backtracking until the gradient
/// norm drops below tol or max_iters is reached.
inline LinearClassifier fit_logistic(const EmbeddingTable& train,
                                     double l2_strength, int max_iters,
                                     double tol) {
  const auto rows = detail::labeled_rows(train);
  if (rows.empty()) throw UsageError("logistic: no labeled train rows");
  for (const auto* row : rows)
    for (const double v : row->values)
      if (!std::isfinite(v))
        throw NumericError("logistic: non-finite feature");

  LinearClassifier model;
  {
    std::set<int> classes;
    for (const auto* row : rows) classes.insert(*row->label);
    model.class_ids.assign(classes.begin(), classes.end());
  }
  const int classes = static_cast<int>(model.class_ids.size());
  if (classes < 2)
    throw DataError("logistic: need at least 2 classes, found " +
                    std::to_string(classes));
  const int p = static_cast<int>(rows.front()->values.size());

  std::vector<int> dense(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    dense[i] = static_cast<int>(
        std::lower_bound(model.class_ids.begin(), model.class_ids.end(),
                         *rows[i]->label) -
        model.class_ids.begin());

  detail::LogisticObjective objective{rows, dense, classes, p, l2_strength};
  std::vector<double> theta(static_cast<std::size_t>(classes) * p + classes,
                            0.0);
  std::vector<double> grad, candidate;
  double value = objective(theta, &grad);
  double step = 1.0;
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    double grad_norm_sq = 0;
    for (const double g : grad) grad_norm_sq += g * g;
    model.final_grad_norm = std::sqrt(grad_norm_sq);
    if (model.final_grad_norm < tol) break;

    step = std::min(step * 2.0, 1e6);
    bool moved = false;
    while (step > 1e-14) {
      candidate.resize(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i)
        candidate[i] = theta[i] - step * grad[i];
      const double cand_value = objective(candidate, nullptr);
      if (cand_value <= value - 1e-4 * step * grad_norm_sq) {
        theta.swap(candidate);
        value = cand_value;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // no descent direction at machine precision
    value = objective(theta, &grad);
  }
  model.iterations = iter;
  model.weights.assign(theta.begin(),
                       theta.begin() + static_cast<std::size_t>(classes) * p);
  model.bias.assign(theta.begin() + static_cast<std::size_t>(classes) * p,
                    theta.end());
  return model;
}

inline EvalReport logistic_regression(const EmbeddingTable& train,
                                      const EmbeddingTable& test,
                                      double l2_strength = 1e-3,
                                      int max_iters = 200,
                                      double tol = 1e-6) {
  const LinearClassifier model =
      fit_logistic(train, l2_strength, max_iters, tol);
  std::vector<int> pred, truth;
  for (const EmbeddingRow& row : test.rows)
    if (row.label) {
      pred.push_back(model.predict(row.values));
      truth.push_back(*row.label);
    }
  EvalReport report;
  report.metric = "accuracy";
  report.config_echo = {{"classifier", "logistic"},
                        {"l2", detail::format_double(l2_strength)},
                        {"max_iters", std::to_string(max_iters)},
                        {"tol", detail::format_double(tol)},
                        {"iterations", std::to_string(model.iterations)}};
  report.per_trial = {accuracy(pred, truth)};
  report.finalize();
  return report;
}

/// Nearest per-class mean embedding; distance ties take the lowest class id.
inline std::vector<int> nearest_centroid_predict(const EmbeddingTable& train,
                                                 const EmbeddingTable& test) {
  const auto rows = detail::labeled_rows(train);
  if (rows.empty()) throw UsageError("nearest_centroid: no labeled rows");
  const int p = static_cast<int>(rows.front()->values.size());
  std::map<int, std::pair<std::vector<double>, int>> sums;
  for (const auto* row : rows) {
    auto& [sum, count] = sums[*row->label];
    if (sum.empty()) sum.assign(p, 0.0);
    for (int j = 0; j < p; ++j) sum[j] += row->values[j];
    count += 1;
  }
  std::vector<std::pair<int, std::vector<double>>> centroids;
  for (auto& [cls, entry] : sums) {
    for (double& v : entry.first) v /= entry.second;
    centroids.emplace_back(cls, std::move(entry.first));
  }
  std::vector<int> pred;
  pred.reserve(test.rows.size());
  for (const EmbeddingRow& row : test.rows) {
    int best = centroids.front().first;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& [cls, centroid] : centroids) {
      const double dist = euclidean_distance(row.values, centroid);
      if (dist < best_dist) {  // strict: ascending class order keeps lowest id
        best_dist = dist;
        best = cls;
      }
    }
    pred.push_back(best);
  }
  return pred;
}

inline EvalReport nearest_centroid(const EmbeddingTable& train,
                                   const EmbeddingTable& test) {
  const std::vector<int> pred = nearest_centroid_predict(train, test);
  std::vector<int> pred_labeled, truth;
  for (std::size_t i = 0; i < test.rows.size(); ++i)
    if (test.rows[i].label) {
      pred_labeled.push_back(pred[i]);
      truth.push_back(*test.rows[i].label);
    }
  EvalReport report;
  report.metric = "accuracy";
  report.config_echo = {{"classifier", "centroid"}};
  report.per_trial = {accuracy(pred_labeled, truth)};
  report.finalize();
  return report;
}

// --------------------------------------------------------------------------
// Pixel-space baselines
// --------------------------------------------------------------------------

namespace detail {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. `a` is row-major
/// p x p and is destroyed; eigenvectors come back as columns of `vecs`.
inline void jacobi_eigen(std::vector<double>& a, int p,
                         std::vector<double>& values,
                         std::vector<double>& vecs) {
  vecs.assign(static_cast<std::size_t>(p) * p, 0.0);
  for (int i = 0; i < p; ++i) vecs[static_cast<std::size_t>(i) * p + i] = 1.0;
  auto at = [&](int i, int j) -> double& {
    return a[static_cast<std::size_t>(i) * p + j];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-26 * p * p) break;
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j) {
        const double apq = at(i, j);
        if (apq == 0) continue;
        const double app = at(i, i);
        const double aqq = at(j, j);
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < p; ++k) {
          const double aki = at(k, i), akj = at(k, j);
          at(k, i) = c * aki - s * akj;
          at(k, j) = s * aki + c * akj;
        }
        for (int k = 0; k < p; ++k) {
          const double aik = at(i, k), ajk = at(j, k);
          at(i, k) = c * aik - s * ajk;
          at(j, k) = s * aik + c * ajk;
        }
        for (int k = 0; k < p; ++k) {
          const double vki = vecs[static_cast<std::size_t>(k) * p + i];
          const double vkj = vecs[static_cast<std::size_t>(k) * p + j];
          vecs[static_cast<std::size_t>(k) * p + i] = c * vki - s * vkj;
          vecs[static_cast<std::size_t>(k) * p + j] = s * vki + c * vkj;
        }
      }
  }
  values.resize(p);
  for (int i = 0; i < p; ++i) values[i] = at(i, i);
}

inline std::vector<double> flatten_tile(const Tile& tile) {
  return tile.samples;  // already a flat planar buffer
}

}  // namespace detail

/// Mean-centered projection onto the top principal directions of the sample
/// covariance, fit on a seeded subsample. Component signs are canonicalized
/// so the largest-magnitude coordinate is positive. `components_out`
/// (optional) receives the principal directions, one vector per component.
inline EmbeddingTable pca_features(const std::vector<Tile>& tiles,
                                   int n_components, int fit_sample,
                                   std::uint64_t seed,
                                   std::vector<std::vector<double>>*
                                       components_out = nullptr) {
  if (tiles.empty()) throw UsageError("pca_features: no tiles");
  const int p = static_cast<int>(tiles.front().samples.size());
  if (n_components < 1 || n_components > p)
    throw UsageError("pca_features: n_components out of range");
  if (fit_sample < n_components)
    throw UsageError("pca_features: fewer fit samples than components");

  Rng rng(seed, 0);
  const std::size_t m =
      std::min<std::size_t>(tiles.size(), static_cast<std::size_t>(fit_sample));
  std::vector<std::size_t> subset;
  if (m == tiles.size()) {
    subset.resize(m);
    for (std::size_t i = 0; i < m; ++i) subset[i] = i;
  } else {
    subset = rng.sample_without_replacement(tiles.size(), m);
  }
  if (static_cast<int>(m) < n_components)
    throw UsageError("pca_features: fewer fit samples than components");

  std::vector<double> mean(p, 0.0);
  for (const std::size_t i : subset)
    for (int j = 0; j < p; ++j) mean[j] += tiles[i].samples[j];
  for (double& v : mean) v /= static_cast<double>(m);

  std::vector<double> cov(static_cast<std::size_t>(p) * p, 0.0);
  std::vector<double> centered(p);
  for (const std::size_t i : subset) {
    for (int j = 0; j < p; ++j) centered[j] = tiles[i].samples[j] - mean[j];
    for (int r = 0; r < p; ++r) {
      const double cr = centered[r];
      double* row = cov.data() + static_cast<std::size_t>(r) * p;
      for (int c = r; c < p; ++c) row[c] += cr * centered[c];
    }
  }
  const double denom = m > 1 ? static_cast<double>(m - 1) : 1.0;
  for (int r = 0; r < p; ++r)
    for (int c = r; c < p; ++c) {
      const double v = cov[static_cast<std::size_t>(r) * p + c] / denom;
      cov[static_cast<std::size_t>(r) * p + c] = v;
      cov[static_cast<std::size_t>(c) * p + r] = v;
    }

  std::vector<double> eigvals, eigvecs;
  detail::jacobi_eigen(cov, p, eigvals, eigvecs);
  std::vector<int> order(p);
  for (int i = 0; i < p; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return eigvals[a] > eigvals[b]; });

  // components[k][j]: j-th coordinate of the k-th principal direction
  std::vector<std::vector<double>> components(n_components,
                                              std::vector<double>(p));
  for (int k = 0; k < n_components; ++k) {
    const int col = order[k];
    double peak = 0;
    int peak_j = 0;
    for (int j = 0; j < p; ++j) {
      components[k][j] = eigvecs[static_cast<std::size_t>(j) * p + col];
      if (std::abs(components[k][j]) > std::abs(peak)) {
        peak = components[k][j];
        peak_j = j;
      }
    }
    if (components[k][peak_j] < 0)
      for (double& v : components[k]) v = -v;
  }
  if (components_out) *components_out = components;

  EmbeddingTable table;
  table.rows.resize(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    EmbeddingRow& row = table.rows[i];
    row.id = static_cast<long>(i);
    row.x = tiles[i].origin_x;
    row.y = tiles[i].origin_y;
    row.values.resize(n_components);
    for (int k = 0; k < n_components; ++k) {
      double score = 0;
      for (int j = 0; j < p; ++j)
        score += (tiles[i].samples[j] - mean[j]) * components[k][j];
      row.values[k] = score;
    }
  }
  return table;
}

/// Lloyd's algorithm with seeded distinct-point initialization; the feature
/// vector is the Euclidean distance to each centroid. Empty clusters
/// re-seed at the point farthest from its assigned centroid. `wcss_trace`
/// (optional) receives the within-cluster sum of squares after each
/// assignment step.
inline EmbeddingTable kmeans_features(const std::vector<Tile>& tiles, int k,
                                      int iters, std::uint64_t seed,
                                      std::vector<double>* wcss_trace =
                                          nullptr) {
  if (tiles.empty()) throw UsageError("kmeans_features: no tiles");
  if (k < 1 || static_cast<std::size_t>(k) > tiles.size())
    throw UsageError("kmeans_features: k out of range");
  const int p = static_cast<int>(tiles.front().samples.size());
  const std::size_t n = tiles.size();

  Rng rng(seed, 0);
  const std::vector<std::size_t> init = rng.sample_without_replacement(n, k);
  std::vector<std::vector<double>> centroids(k);
  for (int c = 0; c < k; ++c) centroids[c] = tiles[init[c]].samples;

  std::vector<int> assign(n, 0);
  std::vector<double> best_dist(n, 0.0);
  for (int iter = 0; iter < iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_sq = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double sq = 0;
        for (int j = 0; j < p; ++j) {
          const double d = tiles[i].samples[j] - centroids[c][j];
          sq += d * d;
        }
        if (sq < best_sq) {
          best_sq = sq;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
      best_dist[i] = best_sq;
    }
    if (wcss_trace) {
      double wcss = 0;
      for (const double d : best_dist) wcss += d;
      wcss_trace->push_back(wcss);
    }

    std::vector<std::vector<double>> sums(k, std::vector<double>(p, 0.0));
    std::vector<long> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) sums[assign[i]][j] += tiles[i].samples[j];
      counts[assign[i]] += 1;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // re-seed at the point farthest from its centroid
        std::size_t farthest = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (best_dist[i] > best_dist[farthest]) farthest = i;
        centroids[c] = tiles[farthest].samples;
        best_dist[farthest] = 0;
        changed = true;
      } else {
        for (int j = 0; j < p; ++j)
          centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
      }
    }
    if (!changed) break;
  }

  EmbeddingTable table;
  table.rows.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    EmbeddingRow& row = table.rows[i];
    row.id = static_cast<long>(i);
    row.x = tiles[i].origin_x;
    row.y = tiles[i].origin_y;
    row.values.resize(k);
    for (int c = 0; c < k; ++c)
      row.values[c] = euclidean_distance(tiles[i].samples, centroids[c]);
  }
  return table;
}

// --------------------------------------------------------------------------
// Ridge regression
// --------------------------------------------------------------------------

struct RidgeModel {
  std::vector<double> weights;
  double intercept = 0;

  double predict(std::span<const double> features) const {
    double out = intercept;
    for (std::size_t j = 0; j < weights.size(); ++j)
      out += weights[j] * features[j];
    return out;
  }
};

namespace detail {

/// Cholesky solve of a symmetric positive-definite system; destroys `a`.
inline std::vector<double> cholesky_solve(std::vector<double>& a,
                                          std::vector<double>& b, int p) {
  double scale = 0;
  for (int i = 0; i < p; ++i)
    scale = std::max(scale, std::abs(a[static_cast<std::size_t>(i) * p + i]));
  const double floor = std::max(scale * 1e-12, 1e-300);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a[static_cast<std::size_t>(i) * p + j];
      for (int t = 0; t < j; ++t)
        sum -= a[static_cast<std::size_t>(i) * p + t] *
               a[static_cast<std::size_t>(j) * p + t];
      if (i == j) {
        if (sum <= floor)
          throw NumericError(
              "ridge system is singular; use an alpha greater than 0");
        a[static_cast<std::size_t>(i) * p + j] = std::sqrt(sum);
      } else {
        a[static_cast<std::size_t>(i) * p + j] =
            sum / a[static_cast<std::size_t>(j) * p + j];
      }
    }
  }
  for (int i = 0; i < p; ++i) {
    double sum = b[i];
    for (int t = 0; t < i; ++t)
      sum -= a[static_cast<std::size_t>(i) * p + t] * b[t];
    b[i] = sum / a[static_cast<std::size_t>(i) * p + i];
  }
  for (int i = p - 1; i >= 0; --i) {
    double sum = b[i];
    for (int t = i + 1; t < p; ++t)
      sum -= a[static_cast<std::size_t>(t) * p + i] * b[t];
    b[i] = sum / a[static_cast<std::size_t>(i) * p + i];
  }
  return b;
}

}  // namespace detail

/// Closed-form ridge: (Xc'Xc + alpha I)^-1 Xc'yc on centered data, with the
/// intercept recovered from the means so alpha never penalizes it. With
/// fit_intercept = false the raw normal equations are solved instead.
inline RidgeModel ridge_regression(const std::vector<std::vector<double>>& X,
                                   const std::vector<double>& y, double alpha,
                                   bool fit_intercept = true) {
  if (X.empty() || X.size() != y.size())
    throw UsageError("ridge: feature rows and targets must align");
  if (alpha < 0) throw UsageError("ridge: alpha must be >= 0");
  const int p = static_cast<int>(X.front().size());
  const std::size_t n = X.size();

  std::vector<double> x_mean(p, 0.0);
  double y_mean = 0;
  if (fit_intercept) {
    for (const auto& row : X)
      for (int j = 0; j < p; ++j) x_mean[j] += row[j];
    for (double& v : x_mean) v /= static_cast<double>(n);
    for (const double t : y) y_mean += t;
    y_mean /= static_cast<double>(n);
  }

  std::vector<double> gram(static_cast<std::size_t>(p) * p, 0.0);
  std::vector<double> rhs(p, 0.0);
  std::vector<double> centered(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) centered[j] = X[i][j] - x_mean[j];
    const double yc = y[i] - y_mean;
    for (int r = 0; r < p; ++r) {
      for (int c = r; c < p; ++c)
        gram[static_cast<std::size_t>(r) * p + c] += centered[r] * centered[c];
      rhs[r] += centered[r] * yc;
    }
  }
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < r; ++c)
      gram[static_cast<std::size_t>(r) * p + c] =
          gram[static_cast<std::size_t>(c) * p + r];
  for (int j = 0; j < p; ++j)
    gram[static_cast<std::size_t>(j) * p + j] += alpha;

  RidgeModel model;
  model.weights = detail::cholesky_solve(gram, rhs, p);
  if (fit_intercept) {
    model.intercept = y_mean;
    for (int j = 0; j < p; ++j)
      model.intercept -= model.weights[j] * x_mean[j];
  }
  return model;
}

// --------------------------------------------------------------------------
// Cross-validation
// --------------------------------------------------------------------------

struct KnnSpec {
  int k = 5;
};
struct LogisticSpec {
  double l2 = 1e-3;
  int max_iters = 200;
  double tol = 1e-6;
};
struct CentroidSpec {};
struct RidgeSpec {
  double alpha = 1.0;
};
struct KnnRegressorSpec {
  int k = 5;
};

using ModelSpec =
    std::variant<KnnSpec, LogisticSpec, CentroidSpec, RidgeSpec,
                 KnnRegressorSpec>;

inline bool is_regression_spec(const ModelSpec& spec) {
  return std::holds_alternative<RidgeSpec>(spec) ||
         std::holds_alternative<KnnRegressorSpec>(spec);
}

namespace detail {

/// Fold assignment for one trial. Classification folds are stratified per
/// class; regression folds are plain round-robin over a seeded shuffle.
/// Every row lands in exactly one fold, and sizes differ by at most 1.
inline std::vector<int> fold_assignment(const EmbeddingTable& table,
                                        int folds, bool stratify,
                                        std::uint64_t trial_seed,
                                        std::vector<std::string>* warnings) {
  const std::size_t n = table.rows.size();
  std::vector<int> assignment(n, -1);
  Rng rng(trial_seed, 0);
  if (!stratify) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t i = 0; i < n; ++i)
      assignment[order[i]] = static_cast<int>(i % folds);
    return assignment;
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) {
    if (!table.rows[i].label)
      throw UsageError("stratified folds need labels on every row");
    by_class[*table.rows[i].label].push_back(i);
  }
  std::size_t cursor = 0;
  for (auto& [cls, members] : by_class) {
    rng.shuffle(members);
    for (const std::size_t i : members)
      assignment[i] = static_cast<int>(cursor++ % folds);
  }
  if (warnings) {
    for (const auto& [cls, members] : by_class)
      if (static_cast<int>(members.size()) < folds)
        warnings->push_back("class " + std::to_string(cls) + " has only " +
                            std::to_string(members.size()) +
                            " rows; it is absent from some training folds");
  }
  return assignment;
}

inline EmbeddingTable select_rows(const EmbeddingTable& table,
                                  const std::vector<int>& assignment,
                                  int fold, bool take_fold) {
  EmbeddingTable out;
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    if ((assignment[i] == fold) == take_fold)
      out.rows.push_back(table.rows[i]);
  return out;
}

inline std::pair<std::vector<std::vector<double>>, std::vector<double>>
features_targets(const EmbeddingTable& table) {
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  for (const EmbeddingRow& row : table.rows) {
    if (!row.target) continue;
    X.push_back(row.values);
    y.push_back(*row.target);
  }
  if (X.empty()) throw UsageError("no rows with regression targets");
  return {std::move(X), std::move(y)};
}

/// kNN regression: mean target of the k nearest train rows.
inline std::vector<double> knn_regress(const EmbeddingTable& train,
                                       const EmbeddingTable& test, int k) {
  std::vector<const EmbeddingRow*> rows;
  for (const EmbeddingRow& row : train.rows)
    if (row.target) rows.push_back(&row);
  if (rows.empty() || k < 1 || static_cast<std::size_t>(k) > rows.size())
    throw UsageError("knn regression: bad k or no targets");
  std::vector<double> out;
  std::vector<std::pair<double, const EmbeddingRow*>> dists(rows.size());
  for (const EmbeddingRow& q : test.rows) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      dists[i] = {euclidean_distance(q.values, rows[i]->values), rows[i]};
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first < b.first;
                        return a.second->id < b.second->id;
                      });
    double sum = 0;
    for (int i = 0; i < k; ++i) sum += *dists[i].second->target;
    out.push_back(sum / k);
  }
  return out;
}

}  // namespace detail

/// Seeded trials of k-fold evaluation. Classification specs return an
/// EvalReport over per-trial accuracies; regression specs a
/// RegressionReport over per-trial mean r2 with per-fold values retained.
inline std::variant<EvalReport, RegressionReport> cross_validate(
    const EmbeddingTable& table, const ModelSpec& spec, int folds, int trials,
    std::uint64_t seed) {
  if (folds < 2) throw UsageError("cross_validate: folds must be >= 2");
  if (trials < 1) throw UsageError("cross_validate: trials must be >= 1");
  if (table.rows.size() < static_cast<std::size_t>(folds))
    throw UsageError("cross_validate: fewer rows than folds");

  const bool regression = is_regression_spec(spec);
  EvalReport eval_report;
  RegressionReport reg_report;
  std::vector<std::string> warnings;

  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t trial_seed = substream_seed(seed, trial);
    const std::vector<int> assignment = detail::fold_assignment(
        table, folds, /*stratify=*/!regression, trial_seed,
        trial == 0 ? &warnings : nullptr);
    std::vector<double> fold_metrics;
    for (int fold = 0; fold < folds; ++fold) {
      const EmbeddingTable train =
          detail::select_rows(table, assignment, fold, false);
      const EmbeddingTable test =
          detail::select_rows(table, assignment, fold, true);
      if (regression) {
        auto [X, y] = detail::features_targets(train);
        std::vector<double> pred;
        std::vector<double> truth;
        double coef_norm = 0;
        if (const auto* ridge = std::get_if<RidgeSpec>(&spec)) {
          const RidgeModel model = ridge_regression(X, y, ridge->alpha);
          coef_norm = l2_norm(model.weights);
          for (const EmbeddingRow& row : test.rows) {
            if (!row.target) continue;
            pred.push_back(model.predict(row.values));
            truth.push_back(*row.target);
          }
        } else {
          const auto& knn = std::get<KnnRegressorSpec>(spec);
          EmbeddingTable labeled_test;
          for (const EmbeddingRow& row : test.rows)
            if (row.target) labeled_test.rows.push_back(row);
          pred = detail::knn_regress(train, labeled_test, knn.k);
          for (const EmbeddingRow& row : labeled_test.rows)
            truth.push_back(*row.target);
        }
        const double fold_r2 = r2(pred, truth);
        reg_report.per_fold_r2.push_back(fold_r2);
        reg_report.coefficient_norms.push_back(coef_norm);
        fold_metrics.push_back(fold_r2);
      } else {
        std::vector<int> pred;
        if (const auto* knn = std::get_if<KnnSpec>(&spec))
          pred = knn_predict(train, test, knn->k);
        else if (const auto* logistic = std::get_if<LogisticSpec>(&spec))
          pred = [&] {
            const LinearClassifier model = fit_logistic(
                train, logistic->l2, logistic->max_iters, logistic->tol);
            std::vector<int> out;
            for (const EmbeddingRow& row : test.rows)
              out.push_back(model.predict(row.values));
            return out;
          }();
        else
          pred = nearest_centroid_predict(train, test);
        std::vector<int> pred_labeled, truth;
        for (std::size_t i = 0; i < test.rows.size(); ++i)
          if (test.rows[i].label) {
            pred_labeled.push_back(pred[i]);
            truth.push_back(*test.rows[i].label);
          }
        fold_metrics.push_back(accuracy(pred_labeled, truth));
      }
    }
    const auto [trial_mean, trial_std] = detail::mean_stddev(fold_metrics);
    (void)trial_std;
    if (regression)
      reg_report.per_trial_r2.push_back(trial_mean);
    else
      eval_report.per_trial.push_back(trial_mean);
  }

  const std::vector<std::pair<std::string, std::string>> echo = {
      {"folds", std::to_string(folds)},
      {"trials", std::to_string(trials)},
      {"seed", std::to_string(seed)}};
  if (regression) {
    reg_report.config_echo = echo;
    reg_report.warnings = warnings;
    reg_report.finalize();
    return reg_report;
  }
  eval_report.metric = "accuracy";
  eval_report.config_echo = echo;
  eval_report.warnings = warnings;
  eval_report.finalize();
  return eval_report;
}

// --------------------------------------------------------------------------
// Cluster-averaged embeddings
// --------------------------------------------------------------------------

struct ClusterEmbeddings {
  EmbeddingTable table;
  std::vector<std::string> warnings;
};

/// Per center: samples_per_center tiles are drawn uniformly from the square
/// patch around it (clamped to the raster), encoded, and averaged. Centers
/// whose patch admits no valid tile are skipped with a warning.
template <typename T = double>
ClusterEmbeddings cluster_average_embeddings(
    const RasterGrid& grid, const EncoderParams<T>& params,
    const EncoderConfig& enc_config, const BandStats& stats,
    const std::vector<std::pair<int, int>>& centers, int patch,
    int samples_per_center, int s, std::uint64_t seed) {
  if (patch < s)
    throw UsageError("cluster embeddings: patch must be at least tile size");
  if (samples_per_center < 1)
    throw UsageError("cluster embeddings: samples_per_center must be >= 1");

  ClusterEmbeddings result;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const auto [cx, cy] = centers[c];
    const int lo_x = std::max(0, cx - patch / 2);
    const int hi_x = std::min(grid.width - s, cx - patch / 2 + patch - s);
    const int lo_y = std::max(0, cy - patch / 2);
    const int hi_y = std::min(grid.height - s, cy - patch / 2 + patch - s);
    if (hi_x < lo_x || hi_y < lo_y) {
      result.warnings.push_back("center " + std::to_string(c) + " at (" +
                                std::to_string(cx) + "," + std::to_string(cy) +
                                ") has no valid tile window; skipped");
      continue;
    }
    Rng rng(seed, c);
    std::vector<double> mean;
    for (int i = 0; i < samples_per_center; ++i) {
      const int x = lo_x + static_cast<int>(rng.uniform_below(hi_x - lo_x + 1));
      const int y = lo_y + static_cast<int>(rng.uniform_below(hi_y - lo_y + 1));
      const Embedding e =
          encode(params, enc_config, extract_tile(grid, x, y, s), stats);
      if (mean.empty()) mean.assign(e.values.size(), 0.0);
      for (std::size_t j = 0; j < e.values.size(); ++j)
        mean[j] += e.values[j];
    }
    for (double& v : mean) v /= static_cast<double>(samples_per_center);
    EmbeddingRow row;
    row.id = static_cast<long>(c);
    row.x = cx;
    row.y = cy;
    row.values = std::move(mean);
    result.table.rows.push_back(std::move(row));
  }
  return result;
}

/// Annotates table rows with the modal label of the tile window at each
/// row's origin. Windows below the purity threshold stay unlabeled.
inline void label_embeddings(EmbeddingTable& table, const LabelGrid& labels,
                             int s,
                             std::optional<double> purity = std::nullopt) {
  for (EmbeddingRow& row : table.rows) {
    const std::uint16_t cls = tile_label(labels, row.x, row.y, s, purity);
    if (cls == kUnlabeled)
      row.label.reset();
    else
      row.label = static_cast<int>(cls);
  }
}

}  // namespace t2v
