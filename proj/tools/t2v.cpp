// t2v: command-line surface over the tile-to-vector pipeline.
//
// Subcommands: synth, sample, train, embed, eval, regress, grid, query,
// points. Exit codes: 0 ok, 2 usage, 3 data, 4 numeric. Every run writes a
// config echo file reflecting the effective flag values; timing lives only
// in log columns so all other outputs are byte-reproducible.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "t2v/eval.hpp"
#include "t2v/latent.hpp"
#include "t2v/params_io.hpp"
#include "t2v/pointvec.hpp"
#include "t2v/sampler.hpp"
#include "t2v/training.hpp"

namespace {

using nlohmann::json;

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw t2v::DataError("cannot create directory " + dir);
}

void write_echo(const std::string& dir, const std::string& name,
                const json& echo) {
  t2v::detail::write_file_bytes(join_path(dir, name), echo.dump(2) + "\n");
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const std::string& cell : t2v::detail::split_csv(text))
    out.push_back(
        static_cast<int>(t2v::detail::parse_long(cell, "list entry", "flag")));
  return out;
}

std::optional<int> parse_neighborhood(const std::string& text) {
  if (text == "none") return std::nullopt;
  return static_cast<int>(
      t2v::detail::parse_long(text, "neighborhood", "flag"));
}

t2v::EncoderConfig build_conv_config(int tile_size, int bands,
                                     const std::string& blocks,
                                     const std::string& residual,
                                     int embed_dim, std::uint64_t seed) {
  t2v::EncoderConfig config;
  config.kind = t2v::EncoderKind::conv;
  config.tile_size = tile_size;
  config.bands = bands;
  config.embed_dim = embed_dim;
  config.init_seed = seed;
  config.blocks.clear();
  const std::vector<int> channels = parse_int_list(blocks);
  std::vector<int> res(channels.size(), 0);
  if (!residual.empty()) {
    res = parse_int_list(residual);
    if (res.size() != channels.size())
      throw t2v::UsageError("--residual must match --blocks in length");
  }
  for (std::size_t i = 0; i < channels.size(); ++i)
    config.blocks.push_back(t2v::ConvBlock{channels[i], res[i] != 0});
  config.validate();
  return config;
}

/// Tiles on a regular grid with the given stride.
std::vector<t2v::Tile> grid_tiles(const t2v::RasterGrid& grid, int s,
                                  int step) {
  std::vector<t2v::Tile> tiles;
  for (int y = 0; y + s <= grid.height; y += step)
    for (int x = 0; x + s <= grid.width; x += step)
      tiles.push_back(t2v::extract_tile(grid, x, y, s));
  return tiles;
}

t2v::EmbeddingTable table_from_embeddings(
    const std::vector<t2v::Embedding>& embeddings) {
  t2v::EmbeddingTable table;
  table.rows.resize(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    table.rows[i].id = static_cast<long>(i);
    if (embeddings[i].origin) {
      table.rows[i].x = embeddings[i].origin->first;
      table.rows[i].y = embeddings[i].origin->second;
    }
    table.rows[i].values = embeddings[i].values;
  }
  return table;
}

void print_hits(const t2v::QueryResult& result) {
  std::printf("%4s %8s %6s %6s %14s\n", "rank", "id", "x", "y", "distance");
  for (std::size_t i = 0; i < result.hits.size(); ++i) {
    const t2v::QueryHit& hit = result.hits[i];
    std::printf("%4zu %8ld %6d %6d %14.6f\n", i + 1, hit.id, hit.x, hit.y,
                hit.distance);
  }
}

const t2v::EmbeddingRow& row_by_id(const t2v::EmbeddingTable& table, long id) {
  for (const t2v::EmbeddingRow& row : table.rows)
    if (row.id == id) return row;
  throw t2v::DataError("no embedding row with id " + std::to_string(id));
}

std::string report_csv(const t2v::EvalReport& report) {
  std::string out = "trial,value\n";
  for (std::size_t i = 0; i < report.per_trial.size(); ++i)
    out += std::to_string(i) + "," +
           t2v::detail::format_double(report.per_trial[i]) + "\n";
  out += "mean," + t2v::detail::format_double(report.mean) + "\n";
  out += "stddev," + t2v::detail::format_double(report.stddev) + "\n";
  return out;
}

std::string report_csv(const t2v::RegressionReport& report) {
  std::string out = "trial,mean_r2\n";
  for (std::size_t i = 0; i < report.per_trial_r2.size(); ++i)
    out += std::to_string(i) + "," +
           t2v::detail::format_double(report.per_trial_r2[i]) + "\n";
  out += "mean," + t2v::detail::format_double(report.mean) + "\n";
  out += "stddev," + t2v::detail::format_double(report.stddev) + "\n";
  return out;
}

struct TrainFlags {
  double margin = 50.0;
  double lambda = 0.01;
  int epochs = 50;
  int batch = 50;
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string aug = "shuffle";
  std::uint64_t seed = 0;
  int workers = 1;

  t2v::TrainConfig to_config() const {
    t2v::TrainConfig config;
    config.margin = margin;
    config.lambda = lambda;
    config.epochs = epochs;
    config.batch_size = batch;
    config.learning_rate = lr;
    config.beta1 = beta1;
    config.beta2 = beta2;
    config.epsilon = eps;
    config.augmentation = t2v::augmentation_from_string(aug);
    config.seed = seed;
    config.workers = workers;
    return config;
  }

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--margin", margin, "Hinge margin m");
    cmd->add_option("--lambda", lambda, "Embedding-norm penalty weight");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch", batch, "Mini-batch size");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--beta1", beta1, "Adam beta1");
    cmd->add_option("--beta2", beta2, "Adam beta2");
    cmd->add_option("--eps", eps, "Adam epsilon");
    cmd->add_option("--aug", aug, "Recombination: off, shuffle, or full");
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--workers", workers, "Worker threads (output-invariant)");
  }

  json echo() const {
    return json{{"margin", margin},   {"lambda", lambda}, {"epochs", epochs},
                {"batch", batch},     {"lr", lr},         {"beta1", beta1},
                {"beta2", beta2},     {"eps", eps},       {"aug", aug},
                {"seed", seed},       {"workers", workers}};
  }
};

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int run_synth(const std::string& out_dir, int width, int height, int bands,
              int classes, int region_seeds, double noise, double smooth,
              std::uint64_t seed) {
  ensure_dir(out_dir);
  t2v::SyntheticSpec spec;
  spec.width = width;
  spec.height = height;
  spec.bands = bands;
  spec.num_classes = classes;
  spec.region_seeds = region_seeds;
  spec.noise_sigma = noise;
  spec.smooth_sigma = smooth;
  t2v::Rng spectra_rng(seed, 3);
  spec.class_spectra = t2v::default_class_spectra(classes, bands, spectra_rng);

  auto [grid, labels] = t2v::generate_synthetic(spec, seed);
  const std::string raster_path = join_path(out_dir, "raster.t2vr");
  const std::string labels_path = join_path(out_dir, "labels.t2vl");
  t2v::save_raster(grid, raster_path);
  t2v::save_labels(labels, labels_path);

  const t2v::BandStats stats = t2v::normalize_stats(
      grid, std::min<long>(100000L, static_cast<long>(width) * height), 0);
  json stats_json{{"mean", stats.mean}, {"stddev", stats.stddev}};
  t2v::detail::write_file_bytes(join_path(out_dir, "stats.json"),
                                stats_json.dump(2) + "\n");

  json echo{{"command", "synth"},
            {"width", width},
            {"height", height},
            {"bands", bands},
            {"classes", classes},
            {"region_seeds", region_seeds},
            {"noise", noise},
            {"smooth", smooth},
            {"seed", seed},
            {"class_spectra", spec.class_spectra},
            {"min_interclass_gap", t2v::min_interclass_gap(spec.class_spectra)}};
  write_echo(out_dir, "synth.echo.json", echo);
  std::printf("synth: wrote %s (%dx%dx%d) and %s\n", raster_path.c_str(),
              width, height, bands, labels_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

int run_sample(const std::string& raster_path, const std::string& out_dir,
               long n, int tile_size, const std::string& neighborhood,
               std::uint64_t seed, int max_rejections, int workers) {
  ensure_dir(out_dir);
  auto grid = std::make_shared<t2v::RasterGrid>(t2v::load_raster(raster_path));
  t2v::TripletSpec spec;
  spec.count = n;
  spec.tile_size = tile_size;
  spec.neighborhood = parse_neighborhood(neighborhood);
  spec.seed = seed;
  spec.max_rejections = max_rejections;

  const t2v::TripletSet set =
      t2v::sample_triplets(grid, spec, workers, raster_path);
  const std::string manifest_path = join_path(out_dir, "triplets.manifest");
  t2v::write_manifest(set, manifest_path);

  json echo{{"command", "sample"},       {"raster", raster_path},
            {"n", n},                    {"tile_size", tile_size},
            {"neighborhood", neighborhood}, {"seed", seed},
            {"max_rejections", max_rejections}, {"workers", workers},
            {"raster_sha256", set.raster_sha256}};
  write_echo(out_dir, "sample.echo.json", echo);
  std::printf("sample: wrote %zu triplets to %s\n", set.size(),
              manifest_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(const std::string& raster_path, const std::string& manifest_path,
              const std::string& out_dir, const TrainFlags& flags,
              int embed_dim, const std::string& blocks,
              const std::string& residual, int stats_samples,
              const std::string& precision) {
  ensure_dir(out_dir);
  auto grid = std::make_shared<t2v::RasterGrid>(t2v::load_raster(raster_path));
  const t2v::TripletSet set = t2v::read_manifest(manifest_path, grid);

  t2v::EncoderConfig enc_config =
      build_conv_config(set.spec.tile_size, grid->bands, blocks, residual,
                        embed_dim, flags.seed);
  const t2v::BandStats stats = t2v::normalize_stats(
      *grid,
      std::min<long>(stats_samples,
                     static_cast<long>(grid->width) * grid->height),
      0);
  enc_config.input_stats = stats;

  const t2v::TrainConfig train_config = flags.to_config();
  std::ofstream log(join_path(out_dir, "train.log"));
  const auto on_epoch = [&](int epoch, const t2v::EpochStats& row) {
    const std::string line = std::to_string(epoch) + "\t" +
                             t2v::detail::format_double(row.mean_loss) + "\t" +
                             std::to_string(row.triplets_seen) + "\t" +
                             t2v::detail::format_double(row.seconds);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    log << line << "\n";
  };

  const std::string params_path = join_path(out_dir, "encoder.t2vp");
  if (precision == "float") {
    auto [params, report] =
        t2v::train<float>(set, enc_config, train_config, stats, on_epoch);
    t2v::save_params(params, enc_config, params_path);
  } else if (precision == "double") {
    auto [params, report] =
        t2v::train<double>(set, enc_config, train_config, stats, on_epoch);
    t2v::save_params(params, enc_config, params_path);
  } else {
    throw t2v::UsageError("--precision must be double or float");
  }

  json echo = flags.echo();
  echo["command"] = "train";
  echo["raster"] = raster_path;
  echo["manifest"] = manifest_path;
  echo["embed_dim"] = embed_dim;
  echo["blocks"] = blocks;
  echo["residual"] = residual;
  echo["stats_samples"] = stats_samples;
  echo["precision"] = precision;
  write_echo(out_dir, "train.echo.json", echo);
  std::printf("train: wrote %s\n", params_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

int run_embed(const std::string& raster_path, const std::string& params_path,
              const std::string& out_dir, const std::string& features,
              int tile_size, int step, int components, int fit_sample, int k,
              int iters, std::uint64_t seed, const std::string& labels_path,
              double purity) {
  ensure_dir(out_dir);
  const t2v::RasterGrid grid = t2v::load_raster(raster_path);

  t2v::EmbeddingTable table;
  int s = tile_size;
  if (features == "encoder") {
    if (params_path.empty())
      throw t2v::UsageError("embed --features encoder needs --params");
    auto [params, config] = t2v::load_params(params_path);
    if (!config.input_stats)
      throw t2v::DataError(params_path + ": no stored normalization stats");
    s = config.tile_size;
    const std::vector<t2v::Tile> tiles =
        grid_tiles(grid, s, step > 0 ? step : s);
    table = table_from_embeddings(
        t2v::encode_batch(params, config, tiles, *config.input_stats));
  } else {
    if (s < 1) throw t2v::UsageError("--tile-size required for baselines");
    const std::vector<t2v::Tile> tiles =
        grid_tiles(grid, s, step > 0 ? step : s);
    if (features == "pca")
      table = t2v::pca_features(tiles, components, fit_sample, seed);
    else if (features == "kmeans")
      table = t2v::kmeans_features(tiles, k, iters, seed);
    else
      throw t2v::UsageError("--features must be encoder, pca, or kmeans");
  }

  if (!labels_path.empty()) {
    const t2v::LabelGrid labels = t2v::load_labels(labels_path);
    t2v::label_embeddings(table, labels, s,
                          purity >= 0 ? std::optional<double>(purity)
                                      : std::nullopt);
  }

  const std::string table_path = join_path(out_dir, "embeddings.csv");
  t2v::write_embedding_table(table, table_path);
  json echo{{"command", "embed"},   {"raster", raster_path},
            {"params", params_path}, {"features", features},
            {"tile_size", s},        {"step", step > 0 ? step : s},
            {"components", components}, {"fit_sample", fit_sample},
            {"k", k},                {"iters", iters},
            {"seed", seed},          {"labels", labels_path},
            {"purity", purity}};
  write_echo(out_dir, "embed.echo.json", echo);
  std::printf("embed: wrote %zu rows (d=%d) to %s\n", table.rows.size(),
              table.dim(), table_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int run_eval(const std::string& table_path, const std::string& out_dir,
             std::string model, bool model_given, int k, double l2, int folds,
             int trials, std::uint64_t seed) {
  ensure_dir(out_dir);
  const t2v::EmbeddingTable table = t2v::read_embedding_table(table_path);
  std::string note;
  if (!model_given) {
    model = "logreg";
    note = " (defaulted to logistic regression)";
  }
  t2v::ModelSpec spec;
  if (model == "knn")
    spec = t2v::KnnSpec{k};
  else if (model == "logreg")
    spec = t2v::LogisticSpec{l2, 200, 1e-6};
  else if (model == "centroid")
    spec = t2v::CentroidSpec{};
  else
    throw t2v::UsageError("--model must be knn, logreg, or centroid");

  const auto result = t2v::cross_validate(table, spec, folds, trials, seed);
  const t2v::EvalReport& report = std::get<t2v::EvalReport>(result);
  t2v::detail::write_file_bytes(join_path(out_dir, "eval_report.csv"),
                                report_csv(report));
  json echo{{"command", "eval"}, {"table", table_path}, {"model", model},
            {"k", k},            {"l2", l2},            {"folds", folds},
            {"trials", trials},  {"seed", seed}};
  write_echo(out_dir, "eval.echo.json", echo);
  std::printf("eval: %s%s accuracy = %.4f +/- %.4f over %d trials\n",
              model.c_str(), note.c_str(), report.mean, report.stddev,
              trials);
  for (const std::string& warning : report.warnings)
    std::printf("  warning: %s\n", warning.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// regress
// ---------------------------------------------------------------------------

struct Center {
  long id;
  int x, y;
  double target;
};

std::vector<Center> load_centers(const std::string& path) {
  const std::string bytes = t2v::detail::read_file_bytes(path);
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) ||
      t2v::detail::split_csv(line) !=
          std::vector<std::string>{"id", "x", "y", "target"})
    throw t2v::DataError(path + ": expected header id,x,y,target");
  std::vector<Center> centers;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = t2v::detail::split_csv(line);
    if (fields.size() != 4)
      throw t2v::DataError(path + ": center row needs 4 fields");
    centers.push_back(Center{
        t2v::detail::parse_long(fields[0], "id", path),
        static_cast<int>(t2v::detail::parse_long(fields[1], "x", path)),
        static_cast<int>(t2v::detail::parse_long(fields[2], "y", path)),
        t2v::detail::parse_double(fields[3], "target", path)});
  }
  return centers;
}

int run_regress(const std::string& raster_path, const std::string& params_path,
                const std::string& centers_path, const std::string& out_dir,
                int patch, int samples, double alpha, int folds, int trials,
                std::uint64_t seed) {
  ensure_dir(out_dir);
  const t2v::RasterGrid grid = t2v::load_raster(raster_path);
  auto [params, config] = t2v::load_params(params_path);
  if (!config.input_stats)
    throw t2v::DataError(params_path + ": no stored normalization stats");
  const std::vector<Center> centers = load_centers(centers_path);

  std::vector<std::pair<int, int>> positions;
  for (const Center& c : centers) positions.emplace_back(c.x, c.y);
  t2v::ClusterEmbeddings cluster = t2v::cluster_average_embeddings(
      grid, params, config, *config.input_stats, positions, patch, samples,
      config.tile_size, seed);
  // attach targets by center index
  for (t2v::EmbeddingRow& row : cluster.table.rows)
    row.target = centers[static_cast<std::size_t>(row.id)].target;

  const auto result = t2v::cross_validate(
      cluster.table, t2v::RidgeSpec{alpha}, folds, trials, seed);
  const t2v::RegressionReport& report =
      std::get<t2v::RegressionReport>(result);
  t2v::detail::write_file_bytes(join_path(out_dir, "regress_report.csv"),
                                report_csv(report));
  t2v::write_embedding_table(cluster.table,
                             join_path(out_dir, "cluster_embeddings.csv"));

  json echo{{"command", "regress"},  {"raster", raster_path},
            {"params", params_path}, {"centers", centers_path},
            {"patch", patch},        {"samples_per_center", samples},
            {"alpha", alpha},        {"folds", folds},
            {"trials", trials},      {"seed", seed}};
  write_echo(out_dir, "regress.echo.json", echo);
  std::printf("regress: mean r2 = %.4f +/- %.4f over %d trials of %d-fold\n",
              report.mean, report.stddev, trials, folds);
  for (const std::string& warning : cluster.warnings)
    std::printf("  warning: %s\n", warning.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

int run_grid(const std::string& raster_path, const std::string& labels_path,
             const std::string& out_dir, const std::string& tile_sizes,
             const std::string& neighborhoods, long n, const TrainFlags& flags,
             int embed_dim, const std::string& blocks, int eval_tiles,
             double l2) {
  ensure_dir(out_dir);
  auto grid = std::make_shared<t2v::RasterGrid>(t2v::load_raster(raster_path));
  const t2v::LabelGrid labels = t2v::load_labels(labels_path);
  const std::vector<int> sizes = parse_int_list(tile_sizes);
  std::vector<std::optional<int>> radii;
  for (const std::string& cell : t2v::detail::split_csv(neighborhoods))
    radii.push_back(parse_neighborhood(cell));

  const t2v::BandStats stats = t2v::normalize_stats(
      *grid, std::min<long>(100000L, static_cast<long>(grid->width) * grid->height),
      0);

  std::string csv = "tile_size,neighborhood,accuracy,majority_frequency\n";
  int cell_index = 0;
  for (const int s : sizes) {
    for (const auto& r : radii) {
      const std::uint64_t cell_seed =
          t2v::substream_seed(flags.seed, cell_index++);
      t2v::TripletSpec spec;
      spec.count = n;
      spec.tile_size = s;
      spec.neighborhood = r;
      spec.seed = cell_seed;
      const t2v::TripletSet set = t2v::sample_triplets(grid, spec, 1);

      t2v::EncoderConfig enc_config = build_conv_config(
          s, grid->bands, blocks, "", embed_dim, cell_seed);
      TrainFlags cell_flags = flags;
      cell_flags.seed = cell_seed;
      auto [params, report] =
          t2v::train(set, enc_config, cell_flags.to_config(), stats);

      // labeled evaluation tiles, split half train / half test
      t2v::Rng tile_rng(cell_seed, 777);
      std::vector<t2v::Tile> tiles;
      for (int i = 0; i < 2 * eval_tiles; ++i)
        tiles.push_back(t2v::sample_tile(*grid, s, tile_rng));
      t2v::EmbeddingTable table =
          table_from_embeddings(t2v::encode_batch(params, enc_config, tiles, stats));
      t2v::label_embeddings(table, labels, s);
      t2v::EmbeddingTable train_table, test_table;
      for (std::size_t i = 0; i < table.rows.size(); ++i)
        (i % 2 == 0 ? train_table : test_table).rows.push_back(table.rows[i]);

      const t2v::EvalReport eval =
          t2v::logistic_regression(train_table, test_table, l2);
      std::map<int, int> freq;
      int labeled = 0;
      for (const auto& row : test_table.rows)
        if (row.label) {
          freq[*row.label] += 1;
          ++labeled;
        }
      double majority = 0;
      for (const auto& [cls, count] : freq)
        majority = std::max(majority, static_cast<double>(count) / labeled);

      csv += std::to_string(s) + "," + (r ? std::to_string(*r) : "none") +
             "," + t2v::detail::format_double(eval.mean) + "," +
             t2v::detail::format_double(majority) + "\n";
      std::printf("grid: s=%d r=%s accuracy=%.4f majority=%.4f\n", s,
                  r ? std::to_string(*r).c_str() : "none", eval.mean,
                  majority);
    }
  }
  t2v::detail::write_file_bytes(join_path(out_dir, "grid_report.csv"), csv);
  json echo = flags.echo();
  echo["command"] = "grid";
  echo["raster"] = raster_path;
  echo["labels"] = labels_path;
  echo["tile_sizes"] = tile_sizes;
  echo["neighborhoods"] = neighborhoods;
  echo["n"] = n;
  echo["embed_dim"] = embed_dim;
  echo["blocks"] = blocks;
  echo["eval_tiles"] = eval_tiles;
  echo["l2"] = l2;
  write_echo(out_dir, "grid.echo.json", echo);
  return 0;
}

// ---------------------------------------------------------------------------
// query
// ---------------------------------------------------------------------------

int run_query_nearest(const std::string& table_path, long id, int k,
                      bool include_self, const std::string& out_dir) {
  const t2v::EmbeddingTable table = t2v::read_embedding_table(table_path);
  const t2v::EmbeddingRow& row = row_by_id(table, id);
  std::set<long> exclude;
  if (!include_self) exclude.insert(id);
  const t2v::QueryResult result =
      t2v::nearest(table, std::span<const double>(row.values), k, exclude);
  print_hits(result);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_echo(out_dir, "query.echo.json",
               json{{"command", "query nearest"},
                    {"table", table_path},
                    {"id", id},
                    {"k", k},
                    {"include_self", include_self}});
  }
  return 0;
}

int run_query_interp(const std::string& table_path, long id1, long id2,
                     int steps, int k, const std::string& out_dir) {
  const t2v::EmbeddingTable table = t2v::read_embedding_table(table_path);
  t2v::Embedding z1{row_by_id(table, id1).values, std::nullopt};
  t2v::Embedding z2{row_by_id(table, id2).values, std::nullopt};
  const std::vector<t2v::Embedding> path = t2v::interpolate(z1, z2, steps);
  // endpoint rows are excluded so intermediate neighbors are informative
  const std::set<long> exclude{id1, id2};
  for (int i = 0; i < steps; ++i) {
    std::printf("step %d/%d:\n", i + 1, steps);
    print_hits(t2v::nearest(table, path[i], k, exclude));
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_echo(out_dir, "query.echo.json",
               json{{"command", "query interp"},
                    {"table", table_path},
                    {"id1", id1},
                    {"id2", id2},
                    {"steps", steps},
                    {"k", k}});
  }
  return 0;
}

int run_query_analogy(const std::string& table_path, long id1, long id2,
                      long id3, int k, const std::string& out_dir) {
  const t2v::EmbeddingTable table = t2v::read_embedding_table(table_path);
  t2v::Embedding z1{row_by_id(table, id1).values, std::nullopt};
  t2v::Embedding z2{row_by_id(table, id2).values, std::nullopt};
  t2v::Embedding z3{row_by_id(table, id3).values, std::nullopt};
  const t2v::Embedding query = t2v::analogy(z1, z2, z3);
  print_hits(t2v::nearest(table, query, k, {}));
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_echo(out_dir, "query.echo.json",
               json{{"command", "query analogy"},
                    {"table", table_path},
                    {"id1", id1},
                    {"id2", id2},
                    {"id3", id3},
                    {"k", k}});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// points
// ---------------------------------------------------------------------------

std::vector<t2v::PointTriplet> load_point_triplets(const std::string& path) {
  const std::string bytes = t2v::detail::read_file_bytes(path);
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line != "#t2v-point-triplets v1")
    throw t2v::DataError(path + ": not a t2v-point-triplets v1 file");
  std::vector<t2v::PointTriplet> out;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = t2v::detail::split_csv(line);
    if (fields.size() != 3)
      throw t2v::DataError(path + ": triplet row needs 3 fields");
    out.push_back(t2v::PointTriplet{
        static_cast<int>(t2v::detail::parse_long(fields[0], "anchor", path)),
        static_cast<int>(t2v::detail::parse_long(fields[1], "neighbor", path)),
        static_cast<int>(t2v::detail::parse_long(fields[2], "distant", path))});
  }
  return out;
}

int run_points_sample(const std::string& data_path, const std::string& out_dir,
                      long n, int k, std::uint64_t seed) {
  ensure_dir(out_dir);
  const t2v::PointDataset data = t2v::load_points(data_path);
  const std::vector<t2v::PointTriplet> triplets =
      t2v::sample_point_triplets(data, n, k, seed);
  const std::string path = join_path(out_dir, "point_triplets.csv");
  t2v::detail::write_file_bytes(path,
                                t2v::serialize_point_triplets(triplets, k, seed));
  write_echo(out_dir, "points_sample.echo.json",
             json{{"command", "points sample"},
                  {"data", data_path},
                  {"n", n},
                  {"k", k},
                  {"seed", seed},
                  {"imputed_cells", data.imputed_cells}});
  std::printf("points sample: wrote %zu triplets to %s\n", triplets.size(),
              path.c_str());
  return 0;
}

int run_points_train(const std::string& data_path,
                     const std::string& index_path,
                     const std::string& triplets_path,
                     const std::string& out_dir, long n, int k, int hidden,
                     int embed_dim, const TrainFlags& flags) {
  ensure_dir(out_dir);
  const t2v::PointDataset data = t2v::load_points(data_path);
  const t2v::IndexSpec spec = t2v::load_index_spec(index_path);
  spec.validate(data);
  const t2v::PointDataset restricted = data.without_features(spec.names());

  std::vector<t2v::PointTriplet> triplets;
  if (!triplets_path.empty())
    triplets = load_point_triplets(triplets_path);
  else
    triplets = t2v::sample_point_triplets(data, n, k, flags.seed);

  std::ofstream log(join_path(out_dir, "points_train.log"));
  const auto on_epoch = [&](int epoch, const t2v::EpochStats& row) {
    const std::string line = std::to_string(epoch) + "\t" +
                             t2v::detail::format_double(row.mean_loss) + "\t" +
                             std::to_string(row.triplets_seen) + "\t" +
                             t2v::detail::format_double(row.seconds);
    std::printf("%s\n", line.c_str());
    log << line << "\n";
  };
  auto [encoder, report] = t2v::train_point_encoder(
      restricted, triplets, hidden, embed_dim, flags.to_config(), on_epoch);
  const std::string params_path = join_path(out_dir, "point_encoder.t2vp");
  t2v::save_params(encoder.params, encoder.config, params_path);

  json echo = flags.echo();
  echo["command"] = "points train";
  echo["data"] = data_path;
  echo["index_spec"] = index_path;
  echo["triplets"] = triplets_path;
  echo["n"] = n;
  echo["k"] = k;
  echo["hidden"] = hidden;
  echo["embed_dim"] = embed_dim;
  write_echo(out_dir, "points_train.echo.json", echo);
  std::printf("points train: wrote %s\n", params_path.c_str());
  return 0;
}

int run_points_eval(const std::string& data_path, const std::string& index_path,
                    const std::string& params_path, const std::string& out_dir,
                    int folds, int trials, std::uint64_t seed) {
  ensure_dir(out_dir);
  const t2v::PointDataset data = t2v::load_points(data_path);
  const t2v::IndexSpec spec = t2v::load_index_spec(index_path);
  auto [params, config] = t2v::load_params(params_path);
  t2v::PointEncoder<double> encoder{std::move(params), config};

  const t2v::PointEvalReport report =
      t2v::evaluate_point_embeddings(data, encoder, spec, folds, trials, seed);

  std::string csv = "feature_set,model,hyperparameter,mean_r2,stddev\n";
  std::printf("%-12s %-6s %-12s %10s %10s\n", "features", "model", "hyper",
              "mean_r2", "stddev");
  for (const t2v::PointEvalRow& row : report.rows) {
    csv += row.feature_set + "," + row.model + "," + row.hyperparameter +
           "," + t2v::detail::format_double(row.mean_r2) + "," +
           t2v::detail::format_double(row.stddev) + "\n";
    std::printf("%-12s %-6s %-12s %10.4f %10.4f\n", row.feature_set.c_str(),
                row.model.c_str(), row.hyperparameter.c_str(), row.mean_r2,
                row.stddev);
  }
  t2v::detail::write_file_bytes(join_path(out_dir, "point_eval.csv"), csv);
  for (const std::string& warning : report.warnings)
    std::printf("  warning: %s\n", warning.c_str());
  write_echo(out_dir, "points_eval.echo.json",
             json{{"command", "points eval"},
                  {"data", data_path},
                  {"index_spec", index_path},
                  {"params", params_path},
                  {"folds", folds},
                  {"trials", trials},
                  {"seed", seed}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tile-to-vector embedding engine"};
  app.require_subcommand(1);
  int exit_code = 0;

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic landscape");
  {
    struct {
      std::string out = ".";
      int width = 512, height = 512, bands = 4, classes = 5, region_seeds = 48;
      double noise = 0.5, smooth = 0.0;
      std::uint64_t seed = 0;
    } static f;
    synth->add_option("--out", f.out, "Output directory");
    synth->add_option("--width", f.width);
    synth->add_option("--height", f.height);
    synth->add_option("--bands", f.bands);
    synth->add_option("--classes", f.classes);
    synth->add_option("--region-seeds", f.region_seeds);
    synth->add_option("--noise", f.noise, "Gaussian noise stddev");
    synth->add_option("--smooth", f.smooth, "Illumination correlation length");
    synth->add_option("--seed", f.seed);
    synth->callback([&] {
      exit_code = run_synth(f.out, f.width, f.height, f.bands, f.classes,
                            f.region_seeds, f.noise, f.smooth, f.seed);
    });
  }

  // sample -----------------------------------------------------------------
  auto* sample = app.add_subcommand("sample", "Sample tile triplets");
  {
    struct {
      std::string raster, out = ".";
      long n = 100000;
      int tile_size = 50;
      std::string neighborhood = "100";
      std::uint64_t seed = 0;
      int max_rejections = 1000, workers = 1;
    } static f;
    sample->add_option("--raster", f.raster)->required();
    sample->add_option("--out", f.out);
    sample->add_option("--n", f.n, "Number of triplets");
    sample->add_option("--tile-size", f.tile_size);
    sample->add_option("--neighborhood", f.neighborhood,
                       "Chebyshev radius in pixels, or 'none'");
    sample->add_option("--seed", f.seed);
    sample->add_option("--max-rejections", f.max_rejections);
    sample->add_option("--workers", f.workers);
    sample->callback([&] {
      exit_code = run_sample(f.raster, f.out, f.n, f.tile_size,
                             f.neighborhood, f.seed, f.max_rejections,
                             f.workers);
    });
  }

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train the tile encoder");
  {
    struct {
      std::string raster, manifest, out = ".";
      TrainFlags flags;
      int embed_dim = 32;
      std::string blocks = "16,32,64", residual;
      int stats_samples = 100000;
      std::string precision = "double";
    } static f;
    train->add_option("--raster", f.raster)->required();
    train->add_option("--manifest", f.manifest)->required();
    train->add_option("--out", f.out);
    f.flags.add_flags(train);
    train->add_option("--embed-dim", f.embed_dim);
    train->add_option("--blocks", f.blocks, "Per-block channel counts");
    train->add_option("--residual", f.residual,
                      "Per-block residual flags (0/1 list)");
    train->add_option("--stats-samples", f.stats_samples);
    train->add_option("--precision", f.precision, "double or float");
    train->callback([&] {
      exit_code = run_train(f.raster, f.manifest, f.out, f.flags, f.embed_dim,
                            f.blocks, f.residual, f.stats_samples,
                            f.precision);
    });
  }

  // embed ------------------------------------------------------------------
  auto* embed = app.add_subcommand("embed", "Embed tiles on a regular grid");
  {
    struct {
      std::string raster, params, out = ".", features = "encoder";
      int tile_size = 0, step = 0, components = 10, fit_sample = 10000,
          k = 10, iters = 25;
      std::uint64_t seed = 0;
      std::string labels;
      double purity = -1;
    } static f;
    embed->add_option("--raster", f.raster)->required();
    embed->add_option("--params", f.params);
    embed->add_option("--out", f.out);
    embed->add_option("--features", f.features, "encoder, pca, or kmeans");
    embed->add_option("--tile-size", f.tile_size,
                      "Tile size for pca/kmeans baselines");
    embed->add_option("--step", f.step, "Grid stride (default: tile size)");
    embed->add_option("--components", f.components, "PCA components");
    embed->add_option("--fit-sample", f.fit_sample, "PCA fit subsample");
    embed->add_option("--k", f.k, "k-means cluster count");
    embed->add_option("--iters", f.iters, "k-means iterations");
    embed->add_option("--seed", f.seed);
    embed->add_option("--labels", f.labels, "Label grid for annotation");
    embed->add_option("--purity", f.purity,
                      "Purity threshold (negative: plain modal label)");
    embed->callback([&] {
      exit_code = run_embed(f.raster, f.params, f.out, f.features,
                            f.tile_size, f.step, f.components, f.fit_sample,
                            f.k, f.iters, f.seed, f.labels, f.purity);
    });
  }

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Cross-validated classification");
  {
    struct {
      std::string table, out = ".", model = "logreg";
      int k = 5;
      double l2 = 1e-3;
      int folds = 5, trials = 10;
      std::uint64_t seed = 0;
    } static f;
    eval->add_option("--table", f.table)->required();
    eval->add_option("--out", f.out);
    auto* model_opt =
        eval->add_option("--model", f.model, "knn, logreg, or centroid");
    eval->add_option("--k", f.k);
    eval->add_option("--l2", f.l2);
    eval->add_option("--folds", f.folds);
    eval->add_option("--trials", f.trials);
    eval->add_option("--seed", f.seed);
    eval->callback([&, model_opt] {
      exit_code = run_eval(f.table, f.out, f.model, model_opt->count() > 0,
                           f.k, f.l2, f.folds, f.trials, f.seed);
    });
  }

  // regress ----------------------------------------------------------------
  auto* regress =
      app.add_subcommand("regress", "Cluster-averaged embedding regression");
  {
    struct {
      std::string raster, params, centers, out = ".";
      int patch = 48, samples = 10;
      double alpha = 1.0;
      int folds = 5, trials = 10;
      std::uint64_t seed = 0;
    } static f;
    regress->add_option("--raster", f.raster)->required();
    regress->add_option("--params", f.params)->required();
    regress->add_option("--centers", f.centers, "CSV id,x,y,target")
        ->required();
    regress->add_option("--out", f.out);
    regress->add_option("--patch", f.patch, "Patch side around each center");
    regress->add_option("--samples", f.samples, "Tiles averaged per center");
    regress->add_option("--alpha", f.alpha, "Ridge strength");
    regress->add_option("--folds", f.folds);
    regress->add_option("--trials", f.trials);
    regress->add_option("--seed", f.seed);
    regress->callback([&] {
      exit_code = run_regress(f.raster, f.params, f.centers, f.out, f.patch,
                              f.samples, f.alpha, f.folds, f.trials, f.seed);
    });
  }

  // grid -------------------------------------------------------------------
  auto* grid_cmd =
      app.add_subcommand("grid", "Sweep tile sizes and neighborhoods");
  {
    struct {
      std::string raster, labels, out = ".";
      std::string tile_sizes = "25,50,75,100";
      std::string neighborhoods = "50,100,500,1000,none";
      long n = 1000;
      TrainFlags flags;
      int embed_dim = 32;
      std::string blocks = "16,32,64";
      int eval_tiles = 500;
      double l2 = 1e-3;
    } static f;
    grid_cmd->add_option("--raster", f.raster)->required();
    grid_cmd->add_option("--labels", f.labels)->required();
    grid_cmd->add_option("--out", f.out);
    grid_cmd->add_option("--tile-sizes", f.tile_sizes);
    grid_cmd->add_option("--neighborhoods", f.neighborhoods);
    grid_cmd->add_option("--n", f.n, "Triplets per cell");
    f.flags.add_flags(grid_cmd);
    grid_cmd->add_option("--embed-dim", f.embed_dim);
    grid_cmd->add_option("--blocks", f.blocks);
    grid_cmd->add_option("--eval-tiles", f.eval_tiles,
                         "Labeled tiles per train/test split");
    grid_cmd->add_option("--l2", f.l2);
    grid_cmd->callback([&] {
      exit_code = run_grid(f.raster, f.labels, f.out, f.tile_sizes,
                           f.neighborhoods, f.n, f.flags, f.embed_dim,
                           f.blocks, f.eval_tiles, f.l2);
    });
  }

  // query ------------------------------------------------------------------
  auto* query = app.add_subcommand("query", "Latent-space queries");
  query->require_subcommand(1);
  {
    auto* nearest_cmd = query->add_subcommand("nearest", "k nearest rows");
    struct {
      std::string table, out;
      long id = 0;
      int k = 5;
      bool include_self = false;
    } static fn;
    nearest_cmd->add_option("--table", fn.table)->required();
    nearest_cmd->add_option("--id", fn.id)->required();
    nearest_cmd->add_option("-k,--k", fn.k);
    nearest_cmd->add_flag("--include-self", fn.include_self);
    nearest_cmd->add_option("--out", fn.out);
    nearest_cmd->callback([&] {
      exit_code =
          run_query_nearest(fn.table, fn.id, fn.k, fn.include_self, fn.out);
    });

    auto* interp_cmd =
        query->add_subcommand("interp", "Interpolate and retrieve");
    struct {
      std::string table, out;
      long id1 = 0, id2 = 0;
      int steps = 5, k = 5;
    } static fi;
    interp_cmd->add_option("--table", fi.table)->required();
    interp_cmd->add_option("--id1", fi.id1)->required();
    interp_cmd->add_option("--id2", fi.id2)->required();
    interp_cmd->add_option("--steps", fi.steps);
    interp_cmd->add_option("-k,--k", fi.k);
    interp_cmd->add_option("--out", fi.out);
    interp_cmd->callback([&] {
      exit_code = run_query_interp(fi.table, fi.id1, fi.id2, fi.steps, fi.k,
                                   fi.out);
    });

    auto* analogy_cmd =
        query->add_subcommand("analogy", "z1 + z2 - z3 retrieval");
    struct {
      std::string table, out;
      long id1 = 0, id2 = 0, id3 = 0;
      int k = 5;
    } static fa;
    analogy_cmd->add_option("--table", fa.table)->required();
    analogy_cmd->add_option("--id1", fa.id1)->required();
    analogy_cmd->add_option("--id2", fa.id2)->required();
    analogy_cmd->add_option("--id3", fa.id3)->required();
    analogy_cmd->add_option("-k,--k", fa.k);
    analogy_cmd->add_option("--out", fa.out);
    analogy_cmd->callback([&] {
      exit_code = run_query_analogy(fa.table, fa.id1, fa.id2, fa.id3, fa.k,
                                    fa.out);
    });
  }

  // points -----------------------------------------------------------------
  auto* points = app.add_subcommand("points", "Located feature-vector mode");
  points->require_subcommand(1);
  {
    auto* psample = points->add_subcommand("sample", "Sample point triplets");
    struct {
      std::string data, out = ".";
      long n = 1000;
      int k = 5;
      std::uint64_t seed = 0;
    } static fs;
    psample->add_option("--data", fs.data)->required();
    psample->add_option("--out", fs.out);
    psample->add_option("--n", fs.n);
    psample->add_option("--k", fs.k, "Neighborhood size (k nearest)");
    psample->add_option("--seed", fs.seed);
    psample->callback([&] {
      exit_code = run_points_sample(fs.data, fs.out, fs.n, fs.k, fs.seed);
    });

    auto* ptrain = points->add_subcommand("train", "Train the point encoder");
    struct {
      std::string data, index_spec, triplets, out = ".";
      long n = 1000;
      int k = 5, hidden = 32, embed_dim = 10;
      TrainFlags flags;
    } static ft;
    ptrain->add_option("--data", ft.data)->required();
    ptrain->add_option("--index-spec", ft.index_spec)->required();
    ptrain->add_option("--triplets", ft.triplets,
                       "Triplet file (default: sample internally)");
    ptrain->add_option("--out", ft.out);
    ptrain->add_option("--n", ft.n);
    ptrain->add_option("--k", ft.k);
    ptrain->add_option("--hidden", ft.hidden);
    ptrain->add_option("--embed-dim", ft.embed_dim);
    ft.flags.add_flags(ptrain);
    ptrain->callback([&] {
      exit_code = run_points_train(ft.data, ft.index_spec, ft.triplets,
                                   ft.out, ft.n, ft.k, ft.hidden,
                                   ft.embed_dim, ft.flags);
    });

    auto* peval = points->add_subcommand("eval", "Evaluate point embeddings");
    struct {
      std::string data, index_spec, params, out = ".";
      int folds = 3, trials = 10;
      std::uint64_t seed = 0;
    } static fe;
    peval->add_option("--data", fe.data)->required();
    peval->add_option("--index-spec", fe.index_spec)->required();
    peval->add_option("--params", fe.params)->required();
    peval->add_option("--out", fe.out);
    peval->add_option("--folds", fe.folds);
    peval->add_option("--trials", fe.trials);
    peval->add_option("--seed", fe.seed);
    peval->callback([&] {
      exit_code = run_points_eval(fe.data, fe.index_spec, fe.params, fe.out,
                                  fe.folds, fe.trials, fe.seed);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const t2v::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const t2v::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const t2v::Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return exit_code;
}
