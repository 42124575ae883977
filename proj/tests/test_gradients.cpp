#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "grad_check.hpp"
#include "helpers.hpp"
#include "t2v/training.hpp"

using namespace t2v;

namespace {

EncoderConfig grad_config() {
  EncoderConfig config;
  config.tile_size = 8;
  config.bands = 2;
  config.blocks = {{4, false}, {8, false}};
  config.embed_dim = 4;
  config.init_seed = 17;
  return config;
}

std::vector<TileTriplet> random_batch(const RasterGrid& grid, int s, int n,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TileTriplet> batch;
  for (int i = 0; i < n; ++i)
    batch.push_back(TileTriplet{sample_tile(grid, s, rng),
                                sample_tile(grid, s, rng),
                                sample_tile(grid, s, rng)});
  return batch;
}

}  // namespace

TEST_CASE("inactive hinge with zero lambda is flat", "[gradients]") {
  const EncoderConfig config = grad_config();
  const auto params = init_encoder(config);
  const RasterGrid grid = t2v_test::make_grid(32, 32, 2, 3);
  const BandStats stats = normalize_stats(grid, 512, 0);
  // anchor == neighbor makes dist_an = 0, so h = -dist_ad < 0 at m = 0
  const Tile a = extract_tile(grid, 4, 4, 8);
  const Tile d = extract_tile(grid, 20, 12, 8);
  const std::vector<TileTriplet> batch{TileTriplet{a, a, d}};

  const auto [loss, grads] = loss_gradients(params, config, batch, 0.0, 0.0,
                                            stats);
  REQUIRE(loss == 0.0);
  for (const double g : grads.values) REQUIRE(g == 0.0);
}

TEST_CASE("loss is linear in lambda", "[gradients]") {
  const EncoderConfig config = grad_config();
  const auto params = init_encoder(config);
  const RasterGrid grid = t2v_test::make_grid(48, 48, 2, 4);
  const BandStats stats = normalize_stats(grid, 512, 0);
  const auto batch = random_batch(grid, 8, 3, 5);

  const double margin = 1.0;
  const auto [loss0, g0] = loss_gradients(params, config, batch, margin, 0.0,
                                          stats);
  const auto [loss1, g1] = loss_gradients(params, config, batch, margin, 0.05,
                                          stats);
  const auto [loss2, g2] = loss_gradients(params, config, batch, margin, 0.10,
                                          stats);
  double norms = 0;
  for (const TileTriplet& t : batch) {
    norms += l2_norm(encode(params, config, t.anchor, stats).values);
    norms += l2_norm(encode(params, config, t.neighbor, stats).values);
    norms += l2_norm(encode(params, config, t.distant, stats).values);
  }
  REQUIRE(loss1 - loss0 == Catch::Approx(0.05 * norms).margin(1e-10));
  REQUIRE(loss2 - loss1 == Catch::Approx(0.05 * norms).margin(1e-10));
}

TEST_CASE("loss matches objective_value on the same batch", "[gradients]") {
  const EncoderConfig config = grad_config();
  const auto params = init_encoder(config);
  const RasterGrid grid = t2v_test::make_grid(48, 48, 2, 6);
  const BandStats stats = normalize_stats(grid, 512, 0);
  const auto batch = random_batch(grid, 8, 5, 9);

  const double margin = 2.0, lambda = 0.02;
  const auto [loss, grads] =
      loss_gradients(params, config, batch, margin, lambda, stats);

  std::vector<TripletEmbeddings> embeddings;
  for (const TileTriplet& t : batch)
    embeddings.push_back(
        TripletEmbeddings{encode(params, config, t.anchor, stats).values,
                          encode(params, config, t.neighbor, stats).values,
                          encode(params, config, t.distant, stats).values});
  REQUIRE(loss ==
          Catch::Approx(objective_value(embeddings, margin, lambda))
              .margin(1e-9));
}

TEST_CASE("conv gradients match central finite differences", "[gradients]") {
  const EncoderConfig config = grad_config();
  const auto params = init_encoder(config);
  const RasterGrid grid = t2v_test::make_grid(48, 48, 2, 7);
  const BandStats stats = normalize_stats(grid, 512, 0);
  const auto batch = random_batch(grid, 8, 2, 13);

  const double margin = 1.0, lambda = 0.01;
  const auto [loss, grads] =
      loss_gradients(params, config, batch, margin, lambda, stats);

  const auto result = t2v_test::check_against_fd(
      params, grads.values, [&](const EncoderParams<double>& p) {
        return t2v_test::tile_objective(p, config, batch, margin, lambda,
                                        stats);
      });
  INFO("checked " << result.checked << " skipped " << result.skipped
                  << " max rel err " << result.max_rel_err);
  REQUIRE(result.checked > 200);
  REQUIRE(result.max_rel_err < 1e-4);
}

TEST_CASE("mlp gradients match central finite differences", "[gradients]") {
  auto [params, config] = init_mlp(60, 32, 10, 23);
  const ParamLayout layout = param_layout(config);
  const BandStats stats = t2v_test::identity_stats(60);

  Rng rng(31);
  std::vector<t2v_test::PointTripletFeatures> batch(2);
  std::vector<detail::TripletInputs<double>> inputs(2);
  for (int i = 0; i < 2; ++i) {
    batch[i].anchor = t2v_test::random_vector(rng, 60);
    batch[i].neighbor = t2v_test::random_vector(rng, 60);
    batch[i].distant = t2v_test::random_vector(rng, 60);
    inputs[i].anchor = batch[i].anchor;
    inputs[i].neighbor = batch[i].neighbor;
    inputs[i].distant = batch[i].distant;
  }
  const double margin = 0.5, lambda = 0.01;
  EncoderParams<double> grads;
  detail::triplet_batch_gradients(params, layout, config, inputs, margin,
                                  lambda, grads, 1);
  const auto result = t2v_test::check_against_fd(
      params, grads.values, [&](const EncoderParams<double>& p) {
        return t2v_test::point_objective(p, config, batch, margin, lambda,
                                         stats);
      });
  INFO("checked " << result.checked << " skipped " << result.skipped
                  << " max rel err " << result.max_rel_err);
  REQUIRE(result.checked > 2000);
  REQUIRE(result.max_rel_err < 1e-4);
}

TEST_CASE("gradient reduction is worker-count independent", "[gradients]") {
  const EncoderConfig config = grad_config();
  const auto params = init_encoder(config);
  const RasterGrid grid = t2v_test::make_grid(64, 64, 2, 10);
  const BandStats stats = normalize_stats(grid, 512, 0);
  const auto batch = random_batch(grid, 8, 37, 15);  // several chunks

  const auto [loss1, g1] = loss_gradients(params, config, batch, 5.0, 0.01,
                                          stats, 1);
  const auto [loss4, g4] = loss_gradients(params, config, batch, 5.0, 0.01,
                                          stats, 4);
  REQUIRE(loss1 == loss4);
  REQUIRE(g1.values == g4.values);
}

TEST_CASE("float fast path stays within 1e-3 of the reference loss",
          "[gradients]") {
  const EncoderConfig config = grad_config();
  const auto params64 = init_encoder<double>(config);
  const auto params32 = init_encoder<float>(config);
  const RasterGrid grid = t2v_test::make_grid(48, 48, 2, 19);
  const BandStats stats = normalize_stats(grid, 512, 0);
  const auto batch = random_batch(grid, 8, 6, 20);

  const auto [loss64, g64] = loss_gradients<double>(params64, config, batch,
                                                    10.0, 0.01, stats);
  const auto [loss32, g32] = loss_gradients<float>(params32, config, batch,
                                                   10.0, 0.01, stats);
  REQUIRE(std::abs(loss32 - loss64) / std::abs(loss64) < 1e-3);
}

TEST_CASE("supervised head gradient matches finite differences",
          "[gradients]") {
  EncoderConfig config = grad_config();
  config.softmax_classes = 3;
  auto params = init_encoder(config);
  const ParamLayout layout = param_layout(config);
  // give the zero-initialized classifier head small random values so its
  // gradient is generic
  {
    Rng rng(40);
    for (double& v : slice_span(params, layout, "classifier.weight"))
      v = 0.1 * rng.gaussian();
  }
  const RasterGrid grid = t2v_test::make_grid(48, 48, 2, 41);
  const BandStats stats = normalize_stats(grid, 512, 0);
  Rng rng(42);
  std::vector<Tile> tiles;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    tiles.push_back(sample_tile(grid, 8, rng));
    labels.push_back(i % 3);
  }

  EncoderParams<double> grads;
  grads.values.assign(layout.total, 0.0);
  detail::cross_entropy_pass(params, layout, config, tiles, labels, stats,
                             &grads);

  // finite differences on the mean cross-entropy (no hinge kinks here)
  EncoderParams<double> probe = params;
  double max_rel = 0;
  const double step = 1e-5;
  for (std::size_t i = 0; i < probe.values.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + step;
    const double plus = detail::cross_entropy_pass<double>(probe, layout, config,
                                                   tiles, labels, stats,
                                                   nullptr);
    probe.values[i] = orig - step;
    const double minus = detail::cross_entropy_pass<double>(probe, layout, config,
                                                    tiles, labels, stats,
                                                    nullptr);
    probe.values[i] = orig;
    const double fd = (plus - minus) / (2 * step);
    const double rel = std::abs(grads.values[i] - fd) /
                       std::max({std::abs(grads.values[i]), std::abs(fd),
                                 1e-3});
    max_rel = std::max(max_rel, rel);
  }
  REQUIRE(max_rel < 1e-4);
}
