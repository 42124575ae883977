#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "t2v/eval.hpp"

using namespace t2v;
using t2v_test::TmpDir;

namespace {

EmbeddingRow row(long id, std::vector<double> values,
                 std::optional<int> label = std::nullopt,
                 std::optional<double> target = std::nullopt) {
  EmbeddingRow r;
  r.id = id;
  r.values = std::move(values);
  r.label = label;
  r.target = target;
  return r;
}

/// Gaussian blobs with the given per-class centers and spread.
EmbeddingTable make_blobs(const std::vector<std::vector<double>>& centers,
                          int per_class, double sigma, std::uint64_t seed) {
  EmbeddingTable table;
  Rng rng(seed);
  long id = 0;
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (int i = 0; i < per_class; ++i) {
      std::vector<double> v = centers[c];
      for (double& x : v) x += sigma * rng.gaussian();
      table.rows.push_back(row(id++, v, static_cast<int>(c)));
    }
  return table;
}

/// Feature-space tiles for the pixel-space baselines.
Tile feature_tile(const std::vector<double>& values, int id) {
  Tile t;
  t.size = static_cast<int>(values.size());
  t.bands = 1;
  t.origin_x = id;
  t.origin_y = 0;
  t.samples = values;
  return t;
}

}  // namespace

// --------------------------------------------------------------------------
// Metrics
// --------------------------------------------------------------------------

TEST_CASE("accuracy and r2 worked examples", "[eval]") {
  REQUIRE(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  REQUIRE(accuracy({1, 2, 3, 4, 5, 6, 7, 8, 9, 10},
                   {1, 2, 3, 4, 5, 0, 0, 0, 0, 0}) == 0.5);
  REQUIRE(r2({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 1.0);
  // constant prediction at the mean gives exactly zero
  REQUIRE(r2({2.0, 2.0, 2.0}, {1.0, 2.0, 3.0}) == 0.0);
}

TEST_CASE("metrics are invariant under paired permutations", "[eval]") {
  const std::vector<int> pred{0, 1, 2, 0, 1};
  const std::vector<int> truth{0, 2, 2, 0, 0};
  const std::vector<int> pred_rev(pred.rbegin(), pred.rend());
  const std::vector<int> truth_rev(truth.rbegin(), truth.rend());
  REQUIRE(accuracy(pred, truth) == accuracy(pred_rev, truth_rev));

  const std::vector<double> p{0.5, 1.0, 2.5, 4.0};
  const std::vector<double> t{0.7, 0.9, 2.0, 4.2};
  const std::vector<double> p_rev(p.rbegin(), p.rend());
  const std::vector<double> t_rev(t.rbegin(), t.rend());
  REQUIRE(r2(p, t) == Catch::Approx(r2(p_rev, t_rev)).epsilon(1e-14));
}

// --------------------------------------------------------------------------
// kNN
// --------------------------------------------------------------------------

TEST_CASE("knn worked examples", "[eval]") {
  EmbeddingTable train;
  train.rows = {row(0, {0.0, 0.0}, 7), row(1, {5.0, 0.0}, 3)};
  EmbeddingTable test;
  test.rows = {row(10, {0.0, 0.0}, 7)};

  // coincident point with k=1
  REQUIRE(knn_predict(train, test, 1) == std::vector<int>{7});

  // k=2 vote tie resolves to the nearer point's label
  test.rows = {row(10, {1.0, 0.0})};
  REQUIRE(knn_predict(train, test, 2) == std::vector<int>{7});
  test.rows = {row(10, {4.0, 0.0})};
  REQUIRE(knn_predict(train, test, 2) == std::vector<int>{3});

  REQUIRE_THROWS_AS(knn_predict(train, test, 3), UsageError);
}

TEST_CASE("knn separates well-spaced blobs perfectly", "[eval]") {
  // 10-sigma separation between class centers
  const std::vector<std::vector<double>> centers{
      {0, 0, 0}, {10, 0, 0}, {0, 10, 0}, {0, 0, 10}};
  const EmbeddingTable train = make_blobs(centers, 50, 1.0, 1);
  const EmbeddingTable test = make_blobs(centers, 10, 1.0, 2);
  const EvalReport report = knn_classify(train, test, 5);
  REQUIRE(report.per_trial.size() == 1);
  REQUIRE(report.mean == 1.0);
}

TEST_CASE("knn matches a full-sort oracle", "[eval]") {
  Rng rng(5);
  EmbeddingTable train;
  for (int i = 0; i < 200; ++i)
    train.rows.push_back(row(i, t2v_test::random_vector(rng, 6),
                             static_cast<int>(rng.uniform_below(4))));
  EmbeddingTable test;
  for (int i = 0; i < 100; ++i)
    test.rows.push_back(row(1000 + i, t2v_test::random_vector(rng, 6)));

  const std::vector<int> fast = knn_predict(train, test, 7);
  for (std::size_t q = 0; q < test.rows.size(); ++q) {
    // oracle: full stable sort by (distance, id), then the same vote rule
    std::vector<std::tuple<double, long, int>> all;
    for (const EmbeddingRow& r : train.rows)
      all.emplace_back(euclidean_distance(test.rows[q].values, r.values),
                       r.id, *r.label);
    std::sort(all.begin(), all.end());
    std::map<int, std::pair<int, double>> votes;
    for (int i = 0; i < 7; ++i) {
      votes[std::get<2>(all[i])].first += 1;
      votes[std::get<2>(all[i])].second += std::get<0>(all[i]);
    }
    int best = -1, best_count = -1;
    double best_sum = 0;
    for (const auto& [cls, v] : votes)
      if (v.first > best_count ||
          (v.first == best_count && v.second < best_sum)) {
        best = cls;
        best_count = v.first;
        best_sum = v.second;
      }
    REQUIRE(fast[q] == best);
  }
}

// --------------------------------------------------------------------------
// Logistic regression
// --------------------------------------------------------------------------

TEST_CASE("logistic fits separable 1-D data", "[eval]") {
  EmbeddingTable train;
  for (int i = 0; i < 10; ++i) {
    train.rows.push_back(row(i, {static_cast<double>(i)}, i < 5 ? 0 : 1));
  }
  const EvalReport report = logistic_regression(train, train, 0.0, 500, 1e-9);
  REQUIRE(report.mean == 1.0);
}

TEST_CASE("logistic gradient at zero has no bias component when balanced",
          "[eval]") {
  EmbeddingTable train;
  Rng rng(3);
  for (int i = 0; i < 40; ++i)
    train.rows.push_back(row(i, t2v_test::random_vector(rng, 3), i % 2));
  const auto rows = detail::labeled_rows(train);
  std::vector<int> dense(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) dense[i] = *rows[i]->label;
  detail::LogisticObjective objective{rows, dense, 2, 3, 0.0};
  std::vector<double> theta(2 * 3 + 2, 0.0), grad;
  objective(theta, &grad);
  REQUIRE(std::abs(grad[6]) < 1e-15);
  REQUIRE(std::abs(grad[7]) < 1e-15);
}

TEST_CASE("huge l2 collapses logistic to the majority class", "[eval]") {
  EmbeddingTable train;
  Rng rng(4);
  // class 0 has 30 rows, class 1 has 10
  for (int i = 0; i < 40; ++i)
    train.rows.push_back(row(i, t2v_test::random_vector(rng, 2),
                             i < 30 ? 0 : 1));
  const LinearClassifier model = fit_logistic(train, 1e9, 300, 1e-10);
  for (const double w : model.weights) REQUIRE(std::abs(w) < 1e-4);
  const EvalReport report = logistic_regression(train, train, 1e9, 300, 1e-10);
  REQUIRE(report.mean == Catch::Approx(0.75).margin(1e-12));
}

// --------------------------------------------------------------------------
// Nearest centroid
// --------------------------------------------------------------------------

TEST_CASE("nearest centroid worked examples", "[eval]") {
  EmbeddingTable train;
  train.rows = {row(0, {0.0, 0.0}, 2), row(1, {4.0, 0.0}, 5)};
  const EvalReport self = nearest_centroid(train, train);
  REQUIRE(self.mean == 1.0);

  // equidistant test point goes to the lowest class id
  EmbeddingTable test;
  test.rows = {row(9, {2.0, 0.0}, 2)};
  REQUIRE(nearest_centroid_predict(train, test) == std::vector<int>{2});
}

TEST_CASE("nearest centroid agrees with knn on symmetric blobs", "[eval]") {
  const std::vector<std::vector<double>> centers{{-8, 0}, {8, 0}};
  const int per_class = 25;
  const EmbeddingTable train = make_blobs(centers, per_class, 0.5, 6);
  const EmbeddingTable test = make_blobs(centers, 8, 0.5, 7);
  const std::vector<int> centroid = nearest_centroid_predict(train, test);
  const std::vector<int> knn = knn_predict(train, test, per_class);
  REQUIRE(centroid == knn);
}

// --------------------------------------------------------------------------
// PCA
// --------------------------------------------------------------------------

TEST_CASE("pca on collinear points recovers the line", "[eval]") {
  // points at t * (2, 1, -2) / 3, so the direction has unit norm
  std::vector<Tile> tiles;
  const std::vector<double> direction{2.0 / 3, 1.0 / 3, -2.0 / 3};
  const std::vector<double> ts{-3, -1, 0, 2, 5};
  for (std::size_t i = 0; i < ts.size(); ++i) {
    std::vector<double> v(3);
    for (int j = 0; j < 3; ++j) v[j] = ts[i] * direction[j];
    tiles.push_back(feature_tile(v, static_cast<int>(i)));
  }
  const EmbeddingTable scores = pca_features(tiles, 1, 100, 0);
  // scores equal signed distances along the line (up to global sign)
  const double mean_t = (-3 - 1 + 0 + 2 + 5) / 5.0;
  const double sign =
      scores.rows[0].values[0] * (ts[0] - mean_t) > 0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < ts.size(); ++i)
    REQUIRE(sign * scores.rows[i].values[0] ==
            Catch::Approx(ts[i] - mean_t).margin(1e-9));
}

TEST_CASE("pca components are orthonormal", "[eval]") {
  Rng rng(8);
  std::vector<Tile> tiles;
  for (int i = 0; i < 50; ++i)
    tiles.push_back(feature_tile(t2v_test::random_vector(rng, 7), i));
  const int k = 4;
  std::vector<std::vector<double>> components;
  pca_features(tiles, k, 50, 0, &components);
  REQUIRE(components.size() == 4);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      double dot = 0;
      for (int j = 0; j < 7; ++j) dot += components[a][j] * components[b][j];
      REQUIRE(dot == Catch::Approx(a == b ? 1.0 : 0.0).margin(1e-8));
    }
}

TEST_CASE("pca matches the SVD oracle up to sign", "[eval]") {
  Rng rng(9);
  const int n = 30, p = 6, k = 3;
  std::vector<Tile> tiles;
  Eigen::MatrixXd data(n, p);
  for (int i = 0; i < n; ++i) {
    const auto v = t2v_test::random_vector(rng, p);
    for (int j = 0; j < p; ++j) data(i, j) = v[j];
    tiles.push_back(feature_tile(v, i));
  }
  const EmbeddingTable scores = pca_features(tiles, k, n, 0);

  // oracle: thin SVD of the centered matrix
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::MatrixXd oracle_scores = centered * svd.matrixV().leftCols(k);

  for (int j = 0; j < k; ++j) {
    // align signs per component
    double dot = 0;
    for (int i = 0; i < n; ++i) dot += scores.rows[i].values[j] * oracle_scores(i, j);
    const double sign = dot >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i)
      REQUIRE(scores.rows[i].values[j] ==
              Catch::Approx(sign * oracle_scores(i, j)).margin(1e-8));
  }
}

TEST_CASE("pca five-point toy matches the oracle", "[eval]") {
  const std::vector<std::vector<double>> points{{1, 0, 0},
                                                {0, 1, 0.5},
                                                {-1, 1, 0},
                                                {2, -1, 0.25},
                                                {0, 0, -1}};
  std::vector<Tile> tiles;
  Eigen::MatrixXd data(5, 3);
  for (int i = 0; i < 5; ++i) {
    tiles.push_back(feature_tile(points[i], i));
    for (int j = 0; j < 3; ++j) data(i, j) = points[i][j];
  }
  const EmbeddingTable scores = pca_features(tiles, 2, 5, 0);
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::MatrixXd oracle = centered * svd.matrixV().leftCols(2);
  for (int j = 0; j < 2; ++j) {
    double dot = 0;
    for (int i = 0; i < 5; ++i) dot += scores.rows[i].values[j] * oracle(i, j);
    const double sign = dot >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < 5; ++i)
      REQUIRE(scores.rows[i].values[j] ==
              Catch::Approx(sign * oracle(i, j)).margin(1e-8));
  }
}

TEST_CASE("pca beats random projections at reconstruction", "[eval]") {
  Rng rng(10);
  const int n = 40, p = 8, k = 3;
  // anisotropic data: stretch a few directions
  std::vector<Tile> tiles;
  std::vector<std::vector<double>> data(n);
  for (int i = 0; i < n; ++i) {
    data[i] = t2v_test::random_vector(rng, p);
    data[i][0] *= 4.0;
    data[i][1] *= 2.5;
    tiles.push_back(feature_tile(data[i], i));
  }
  const EmbeddingTable scores = pca_features(tiles, k, n, 0);

  // reconstruction error of a rank-k orthonormal projection B:
  // sum of ||xc||^2 - ||B' xc||^2; smaller is better, and only the
  // projected energy varies, so compare projected energies instead
  std::vector<double> mean(p, 0.0);
  for (const auto& v : data)
    for (int j = 0; j < p; ++j) mean[j] += v[j] / n;

  const auto projected_energy = [&](const std::vector<std::vector<double>>& basis) {
    double energy = 0;
    for (const auto& v : data) {
      for (const auto& b : basis) {
        double dot = 0;
        for (int j = 0; j < p; ++j) dot += (v[j] - mean[j]) * b[j];
        energy += dot * dot;
      }
    }
    return energy;
  };

  double pca_energy = 0;
  for (const auto& r : scores.rows)
    for (const double s : r.values) pca_energy += s * s;

  for (int trial = 0; trial < 100; ++trial) {
    // random orthonormal basis via Gram-Schmidt
    std::vector<std::vector<double>> basis;
    while (static_cast<int>(basis.size()) < k) {
      auto v = t2v_test::random_vector(rng, p);
      for (const auto& b : basis) {
        double dot = 0;
        for (int j = 0; j < p; ++j) dot += v[j] * b[j];
        for (int j = 0; j < p; ++j) v[j] -= dot * b[j];
      }
      const double norm = l2_norm(v);
      if (norm < 1e-6) continue;
      for (double& x : v) x /= norm;
      basis.push_back(v);
    }
    REQUIRE(projected_energy(basis) <= pca_energy + 1e-9);
  }
}

TEST_CASE("pca validates its inputs", "[eval]") {
  std::vector<Tile> tiles{feature_tile({1, 2, 3}, 0),
                          feature_tile({4, 5, 6}, 1)};
  REQUIRE_THROWS_AS(pca_features(tiles, 4, 10, 0), UsageError);
  REQUIRE_THROWS_AS(pca_features(tiles, 3, 2, 0), UsageError);  // m=2 < k=3
  REQUIRE_THROWS_AS(pca_features({}, 1, 1, 0), UsageError);
}

// --------------------------------------------------------------------------
// k-means
// --------------------------------------------------------------------------

TEST_CASE("kmeans recovers well-separated blob centers", "[eval]") {
  Rng rng(11);
  const std::vector<std::vector<double>> centers{{0, 0}, {10, 10}};
  const double sigma = 1.0;
  std::vector<Tile> tiles;
  int id = 0;
  for (const auto& c : centers)
    for (int i = 0; i < 60; ++i) {
      std::vector<double> v = c;
      for (double& x : v) x += sigma * rng.gaussian();
      tiles.push_back(feature_tile(v, id++));
    }
  const EmbeddingTable features = kmeans_features(tiles, 2, 50, 0);
  // feature j is the distance to centroid j; a point sitting on a blob
  // center must be within 0.1 sigma of one centroid... recover centroids
  // by probing with the exact blob centers
  std::vector<Tile> probes{feature_tile({0, 0}, 900),
                           feature_tile({10, 10}, 901)};
  std::vector<Tile> all = tiles;
  all.insert(all.end(), probes.begin(), probes.end());
  const EmbeddingTable with_probes = kmeans_features(all, 2, 50, 0);
  const auto& d0 = with_probes.rows[tiles.size()].values;
  const auto& d1 = with_probes.rows[tiles.size() + 1].values;
  REQUIRE(std::min(d0[0], d0[1]) < 0.1 * sigma * std::sqrt(120.0));
  REQUIRE(std::min(d1[0], d1[1]) < 0.1 * sigma * std::sqrt(120.0));
  REQUIRE(features.dim() == 2);
}

TEST_CASE("kmeans with k equal to n zeroes self-distances", "[eval]") {
  Rng rng(12);
  std::vector<Tile> tiles;
  for (int i = 0; i < 8; ++i)
    tiles.push_back(feature_tile(t2v_test::random_vector(rng, 3), i));
  const EmbeddingTable features = kmeans_features(tiles, 8, 20, 0);
  for (const auto& r : features.rows) {
    double min_dist = 1e300;
    for (const double d : r.values) min_dist = std::min(min_dist, d);
    REQUIRE(min_dist == 0.0);
  }
}

TEST_CASE("kmeans objective never increases", "[eval]") {
  Rng rng(13);
  std::vector<Tile> tiles;
  for (int i = 0; i < 100; ++i)
    tiles.push_back(feature_tile(t2v_test::random_vector(rng, 4), i));
  std::vector<double> trace;
  kmeans_features(tiles, 5, 30, 3, &trace);
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i)
    REQUIRE(trace[i] <= trace[i - 1] + 1e-9);
}

// --------------------------------------------------------------------------
// Ridge regression
// --------------------------------------------------------------------------

TEST_CASE("ridge worked examples", "[eval]") {
  const RidgeModel exact = ridge_regression({{1.0}, {2.0}}, {1.0, 2.0}, 0.0);
  REQUIRE(exact.weights[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(exact.intercept == Catch::Approx(0.0).margin(1e-12));

  const RidgeModel heavy = ridge_regression({{1.0}, {2.0}}, {1.0, 2.0}, 1e12);
  REQUIRE(std::abs(heavy.weights[0]) < 1e-9);
  REQUIRE(heavy.intercept == Catch::Approx(1.5).margin(1e-6));

  // raw normal equations without an intercept: w = (5 + 1)^-1 * 5
  const RidgeModel raw =
      ridge_regression({{1.0}, {2.0}}, {1.0, 2.0}, 1.0, false);
  REQUIRE(raw.weights[0] == Catch::Approx(5.0 / 6.0).margin(1e-12));
  REQUIRE(raw.intercept == 0.0);
}

TEST_CASE("singular ridge system advises a positive alpha", "[eval]") {
  // duplicated column makes X'X singular at alpha = 0
  REQUIRE_THROWS_WITH(
      ridge_regression({{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}}, {1, 2, 3}, 0.0),
      Catch::Matchers::ContainsSubstring("alpha greater than 0"));
}

TEST_CASE("ridge closed form matches a gradient-descent oracle", "[eval]") {
  Rng rng(14);
  for (int instance = 0; instance < 3; ++instance) {
    const int n = 20, p = 5;
    std::vector<std::vector<double>> X(n);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
      X[i] = t2v_test::random_vector(rng, p);
      y[i] = rng.gaussian();
    }
    const double alpha = 0.5;
    const RidgeModel model = ridge_regression(X, y, alpha);

    // oracle: plain gradient descent on 1/2||Xc w - yc||^2 + alpha/2 ||w||^2
    std::vector<double> x_mean(p, 0.0);
    double y_mean = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) x_mean[j] += X[i][j] / n;
      y_mean += y[i] / n;
    }
    std::vector<double> w(p, 0.0);
    for (int iter = 0; iter < 20000; ++iter) {
      std::vector<double> grad(p, 0.0);
      for (int i = 0; i < n; ++i) {
        double resid = -(y[i] - y_mean);
        for (int j = 0; j < p; ++j)
          resid += w[j] * (X[i][j] - x_mean[j]);
        for (int j = 0; j < p; ++j)
          grad[j] += resid * (X[i][j] - x_mean[j]);
      }
      for (int j = 0; j < p; ++j) grad[j] += alpha * w[j];
      for (int j = 0; j < p; ++j) w[j] -= 0.01 * grad[j];
    }
    for (int j = 0; j < p; ++j)
      REQUIRE(model.weights[j] == Catch::Approx(w[j]).margin(1e-6));
  }
}

// --------------------------------------------------------------------------
// Cross-validation
// --------------------------------------------------------------------------

TEST_CASE("cross validation of a perfect predictor", "[eval]") {
  const std::vector<std::vector<double>> centers{{0, 0}, {50, 50}, {-50, 50}};
  const EmbeddingTable table = make_blobs(centers, 20, 0.5, 15);
  const auto result = cross_validate(table, KnnSpec{3}, 5, 4, 99);
  const EvalReport& report = std::get<EvalReport>(result);
  REQUIRE(report.per_trial.size() == 4);
  REQUIRE(report.mean == 1.0);
  REQUIRE(report.stddev == 0.0);
}

TEST_CASE("fold partitions are disjoint, exhaustive, and balanced", "[eval]") {
  const EmbeddingTable table = make_blobs({{0, 0}, {5, 5}}, 13, 1.0, 16);
  for (const bool stratify : {false, true}) {
    const auto assignment =
        detail::fold_assignment(table, 4, stratify, 77, nullptr);
    std::vector<int> sizes(4, 0);
    for (const int fold : assignment) {
      REQUIRE(fold >= 0);
      REQUIRE(fold < 4);
      sizes[fold] += 1;
    }
    int total = 0;
    for (const int s : sizes) total += s;
    REQUIRE(total == 26);  // every row in exactly one fold
    const int min_size = *std::min_element(sizes.begin(), sizes.end());
    const int max_size = *std::max_element(sizes.begin(), sizes.end());
    REQUIRE(max_size - min_size <= 1);
  }
}

TEST_CASE("cross validation is deterministic given the seed", "[eval]") {
  const EmbeddingTable table = make_blobs({{0, 0}, {3, 3}}, 15, 1.5, 17);
  const auto a = cross_validate(table, LogisticSpec{1e-2, 100, 1e-6}, 3, 5, 7);
  const auto b = cross_validate(table, LogisticSpec{1e-2, 100, 1e-6}, 3, 5, 7);
  REQUIRE(std::get<EvalReport>(a).per_trial ==
          std::get<EvalReport>(b).per_trial);
}

TEST_CASE("stratification warns about rare classes", "[eval]") {
  EmbeddingTable table = make_blobs({{0, 0}, {5, 5}}, 10, 1.0, 18);
  table.rows.push_back(row(999, {9.0, 9.0}, 2));  // a single row of class 2
  const auto result = cross_validate(table, KnnSpec{1}, 3, 2, 5);
  const EvalReport& report = std::get<EvalReport>(result);
  REQUIRE_FALSE(report.warnings.empty());
}

TEST_CASE("regression cross validation reports per-fold r2", "[eval]") {
  Rng rng(19);
  EmbeddingTable table;
  for (int i = 0; i < 60; ++i) {
    auto v = t2v_test::random_vector(rng, 3);
    const double target = 2.0 * v[0] - v[1] + 0.5 * v[2] + 1.0;
    table.rows.push_back(row(i, v, std::nullopt, target));
  }
  const auto result = cross_validate(table, RidgeSpec{1e-6}, 5, 2, 3);
  const RegressionReport& report = std::get<RegressionReport>(result);
  REQUIRE(report.per_fold_r2.size() == 10);
  for (const double r : report.per_fold_r2) {
    REQUIRE(r <= 1.0);
    REQUIRE(r > 0.99);  // noiseless linear target
  }
  REQUIRE(report.mean > 0.99);
  REQUIRE(report.coefficient_norms.size() == 10);
}

// --------------------------------------------------------------------------
// Cluster-averaged embeddings
// --------------------------------------------------------------------------

namespace {

struct ClusterFixture {
  RasterGrid grid;
  EncoderConfig config;
  EncoderParams<double> params;
  BandStats stats;

  ClusterFixture() {
    grid = t2v_test::make_grid(64, 64, 2, 20);
    config.tile_size = 8;
    config.bands = 2;
    config.blocks = {{4, false}};
    config.embed_dim = 3;
    config.init_seed = 20;
    params = init_encoder(config);
    stats = normalize_stats(grid, 1024, 0);
  }
};

}  // namespace

TEST_CASE("constant raster gives identical cluster embeddings", "[eval]") {
  ClusterFixture fx;
  fx.grid.pixels.assign(fx.grid.pixels.size(), 3.0);
  const auto result = cluster_average_embeddings(
      fx.grid, fx.params, fx.config, fx.stats,
      {{16, 16}, {40, 40}, {50, 20}}, 16, 5, 8, 0);
  REQUIRE(result.table.rows.size() == 3);
  REQUIRE(result.table.rows[0].values == result.table.rows[1].values);
  REQUIRE(result.table.rows[1].values == result.table.rows[2].values);
}

TEST_CASE("patch equal to tile size forces the window", "[eval]") {
  ClusterFixture fx;
  const auto result = cluster_average_embeddings(
      fx.grid, fx.params, fx.config, fx.stats, {{20, 20}}, 8, 1, 8, 0);
  REQUIRE(result.table.rows.size() == 1);
  // the only valid origin is (16, 16): center 20 - patch/2
  const Embedding direct = encode(fx.params, fx.config,
                                  extract_tile(fx.grid, 16, 16, 8), fx.stats);
  REQUIRE(result.table.rows[0].values == direct.values);
}

TEST_CASE("averaging identical tiles equals one encoding", "[eval]") {
  ClusterFixture fx;
  fx.grid.pixels.assign(fx.grid.pixels.size(), -1.5);
  const auto result = cluster_average_embeddings(
      fx.grid, fx.params, fx.config, fx.stats, {{32, 32}}, 20, 10, 8, 4);
  const Embedding one = encode(fx.params, fx.config,
                               extract_tile(fx.grid, 30, 30, 8), fx.stats);
  for (std::size_t j = 0; j < one.values.size(); ++j)
    REQUIRE(result.table.rows[0].values[j] ==
            Catch::Approx(one.values[j]).epsilon(1e-12));
}

TEST_CASE("centers outside the raster are skipped with a warning", "[eval]") {
  ClusterFixture fx;
  const auto result = cluster_average_embeddings(
      fx.grid, fx.params, fx.config, fx.stats, {{-500, -500}, {32, 32}}, 8, 2,
      8, 0);
  REQUIRE(result.table.rows.size() == 1);
  REQUIRE(result.warnings.size() == 1);
  REQUIRE_THAT(result.warnings[0],
               Catch::Matchers::ContainsSubstring("skipped"));
}

// --------------------------------------------------------------------------
// Embedding table CSV
// --------------------------------------------------------------------------

TEST_CASE("embedding table csv round-trips", "[eval]") {
  TmpDir tmp("table");
  EmbeddingTable table;
  table.rows = {row(3, {1.5, -2.25, 1e-17}, 4, 0.125),
                row(7, {0.1 + 0.2, 3.0, -0.0}),
                row(9, {1.0 / 3.0, 2.0 / 7.0, 1e300}, std::nullopt, -4.5)};
  table.rows[0].x = 10;
  table.rows[0].y = 20;
  write_embedding_table(table, tmp.file("t.csv"));
  const EmbeddingTable back = read_embedding_table(tmp.file("t.csv"));
  REQUIRE(back.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(back.rows[i].id == table.rows[i].id);
    REQUIRE(back.rows[i].values == table.rows[i].values);  // bit-exact
    REQUIRE(back.rows[i].label == table.rows[i].label);
    REQUIRE(back.rows[i].target == table.rows[i].target);
  }
  REQUIRE(back.rows[0].x == 10);
  REQUIRE(back.rows[0].y == 20);
}

TEST_CASE("empty embedding table is header-only", "[eval]") {
  TmpDir tmp("table_empty");
  EmbeddingTable table;
  write_embedding_table(table, tmp.file("e.csv"));
  const std::string bytes = detail::read_file_bytes(tmp.file("e.csv"));
  REQUIRE(bytes == "id,x,y,label,target\n");
  const EmbeddingTable back = read_embedding_table(tmp.file("e.csv"));
  REQUIRE(back.rows.empty());
}

TEST_CASE("embedding table column count is 5 + d", "[eval]") {
  TmpDir tmp("table_cols");
  EmbeddingTable table;
  table.rows = {row(0, {1, 2, 3, 4})};
  write_embedding_table(table, tmp.file("c.csv"));
  const std::string bytes = detail::read_file_bytes(tmp.file("c.csv"));
  const std::string header = bytes.substr(0, bytes.find('\n'));
  REQUIRE(detail::split_csv(header).size() == 5 + 4);
}

TEST_CASE("duplicate embedding ids are rejected", "[eval]") {
  EmbeddingTable table;
  table.rows = {row(1, {1.0}), row(1, {2.0})};
  REQUIRE_THROWS_AS(table.validate(), DataError);
}

TEST_CASE("label_embeddings annotates by origin", "[eval]") {
  LabelGrid labels;
  labels.width = 16;
  labels.height = 16;
  labels.classes.assign(256, 2);
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x) labels.at(x, y) = 6;

  EmbeddingTable table;
  table.rows = {row(0, {0.0}), row(1, {0.0})};
  table.rows[0].x = 0;
  table.rows[0].y = 0;
  table.rows[1].x = 8;
  table.rows[1].y = 8;
  label_embeddings(table, labels, 4);
  REQUIRE(table.rows[0].label == 2);
  REQUIRE(table.rows[1].label == 6);
}
