#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "helpers.hpp"
#include "t2v/sampler.hpp"

using namespace t2v;
using t2v_test::TmpDir;

namespace {

std::shared_ptr<RasterGrid> shared_grid(int w, int h, int bands,
                                        std::uint64_t seed = 42) {
  return std::make_shared<RasterGrid>(t2v_test::make_grid(w, h, bands, seed));
}

}  // namespace

TEST_CASE("sample_tile on a grid-sized window is forced", "[sampler]") {
  const RasterGrid grid = t2v_test::make_grid(6, 6, 1);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const Tile tile = sample_tile(grid, 6, rng);
    REQUIRE(tile.origin_x == 0);
    REQUIRE(tile.origin_y == 0);
  }
  REQUIRE_THROWS_AS(sample_tile(grid, 7, rng), UsageError);
}

TEST_CASE("sample_tile origins are uniform", "[sampler]") {
  const RasterGrid grid = t2v_test::make_grid(10, 10, 1);
  Rng rng(2024);
  std::vector<int> counts(100, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Tile tile = sample_tile(grid, 1, rng);
    counts[tile.origin_y * 10 + tile.origin_x] += 1;
  }
  for (const int c : counts) {
    const double freq = static_cast<double>(c) / draws;
    REQUIRE(std::abs(freq - 0.01) < 0.005);
  }
}

TEST_CASE("sample_tile is deterministic from the rng state", "[sampler]") {
  const RasterGrid grid = t2v_test::make_grid(20, 20, 2);
  Rng a(5), b(5);
  const Tile ta = sample_tile(grid, 4, a);
  const Tile tb = sample_tile(grid, 4, b);
  REQUIRE(ta.origin_x == tb.origin_x);
  REQUIRE(ta.origin_y == tb.origin_y);
  REQUIRE(ta.samples == tb.samples);
}

TEST_CASE("neighborhood_region is the clamped origin box", "[sampler]") {
  const RasterGrid grid = t2v_test::make_grid(1000, 1000, 1);
  Tile anchor;
  anchor.size = 20;
  anchor.origin_x = 100;
  anchor.origin_y = 100;

  const OriginRect rect = neighborhood_region(anchor, 50, grid);
  REQUIRE(rect.x0 == 50);
  REQUIRE(rect.x1 == 150);
  REQUIRE(rect.y0 == 50);
  REQUIRE(rect.y1 == 150);

  anchor.origin_x = anchor.origin_y = 0;
  const OriginRect corner = neighborhood_region(anchor, 50, grid);
  REQUIRE(corner.x0 == 0);
  REQUIRE(corner.x1 == 50);
  REQUIRE(corner.y0 == 0);
  REQUIRE(corner.y1 == 50);

  const OriginRect all = neighborhood_region(anchor, 5000, grid);
  REQUIRE(all.x0 == 0);
  REQUIRE(all.x1 == 980);
  REQUIRE(all.y0 == 0);
  REQUIRE(all.y1 == 980);
}

TEST_CASE("empty triplet set", "[sampler]") {
  auto grid = shared_grid(64, 64, 1);
  TripletSpec spec;
  spec.count = 0;
  spec.tile_size = 16;
  spec.neighborhood = 8;
  const TripletSet set = sample_triplets(grid, spec);
  REQUIRE(set.size() == 0);
}

TEST_CASE("triplets satisfy the Chebyshev constraints", "[sampler]") {
  auto grid = shared_grid(256, 256, 1);
  TripletSpec spec;
  spec.count = 1000;
  spec.tile_size = 16;
  spec.neighborhood = 32;
  spec.seed = 9;
  const TripletSet set = sample_triplets(grid, spec);
  REQUIRE(set.size() == 1000);
  for (const TripletOrigins& o : set.origins) {
    const int dn = std::max(std::abs(o.nx - o.ax), std::abs(o.ny - o.ay));
    const int dd = std::max(std::abs(o.dx - o.ax), std::abs(o.dy - o.ay));
    REQUIRE(dn <= 32);
    REQUIRE(dd > 32);
  }
}

TEST_CASE("materialized triplets share shape and match origins", "[sampler]") {
  auto grid = shared_grid(128, 128, 3);
  TripletSpec spec;
  spec.count = 10;
  spec.tile_size = 8;
  spec.neighborhood = 16;
  const TripletSet set = sample_triplets(grid, spec);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const TileTriplet t = set.materialize(i);
    REQUIRE(t.anchor.size == 8);
    REQUIRE(t.neighbor.size == 8);
    REQUIRE(t.distant.size == 8);
    REQUIRE(t.anchor.bands == 3);
    REQUIRE(t.anchor.origin_x == set.origins[i].ax);
    REQUIRE(t.distant.origin_y == set.origins[i].dy);
  }
}

TEST_CASE("oversized neighborhood exhausts rejections", "[sampler]") {
  auto grid = shared_grid(64, 64, 1);
  TripletSpec spec;
  spec.count = 1;
  spec.tile_size = 16;
  spec.neighborhood = 64;  // no exterior origin exists
  REQUIRE_THROWS_AS(sample_triplets(grid, spec), DataError);
}

TEST_CASE("worker count does not change the sample", "[sampler]") {
  auto grid = shared_grid(200, 150, 2);
  TripletSpec spec;
  spec.count = 5000;
  spec.tile_size = 12;
  spec.neighborhood = 24;
  spec.seed = 31;
  const TripletSet one = sample_triplets(grid, spec, 1);
  const TripletSet four = sample_triplets(grid, spec, 4);
  REQUIRE(one.origins == four.origins);
}

TEST_CASE("unconstrained sampling has matching marginals", "[sampler]") {
  auto grid = shared_grid(40, 40, 1);
  TripletSpec spec;
  spec.count = 30000;
  spec.tile_size = 8;
  spec.neighborhood = std::nullopt;
  spec.seed = 17;
  const TripletSet set = sample_triplets(grid, spec);
  // each of anchor/neighbor/distant x-origins should be uniform over the
  // 33 valid positions
  const int positions = 40 - 8 + 1;
  std::vector<std::vector<int>> counts(3, std::vector<int>(positions, 0));
  for (const TripletOrigins& o : set.origins) {
    counts[0][o.ax] += 1;
    counts[1][o.nx] += 1;
    counts[2][o.dx] += 1;
  }
  const double expected = static_cast<double>(spec.count) / positions;
  for (const auto& stream : counts)
    for (const int c : stream)
      REQUIRE(std::abs(c - expected) < 5.0 * std::sqrt(expected));
}

TEST_CASE("manifest round-trips origins exactly", "[sampler]") {
  TmpDir tmp("manifest");
  auto grid = shared_grid(96, 96, 2, 7);
  TripletSpec spec;
  spec.count = 50;
  spec.tile_size = 10;
  spec.neighborhood = 20;
  spec.seed = 77;
  const TripletSet set = sample_triplets(grid, spec, 1, "source.t2vr");
  write_manifest(set, tmp.file("m.txt"));
  const TripletSet back = read_manifest(tmp.file("m.txt"), grid);
  REQUIRE(back.origins == set.origins);
  REQUIRE(back.spec.tile_size == 10);
  REQUIRE(back.spec.neighborhood == 20);
  REQUIRE(back.spec.seed == 77);
  REQUIRE(back.raster_path == "source.t2vr");
}

TEST_CASE("manifest with neighborhood none round-trips", "[sampler]") {
  TmpDir tmp("manifest_none");
  auto grid = shared_grid(50, 50, 1);
  TripletSpec spec;
  spec.count = 5;
  spec.tile_size = 5;
  spec.neighborhood = std::nullopt;
  const TripletSet set = sample_triplets(grid, spec);
  write_manifest(set, tmp.file("m.txt"));
  const TripletSet back = read_manifest(tmp.file("m.txt"), grid);
  REQUIRE_FALSE(back.spec.neighborhood.has_value());
  REQUIRE(back.origins == set.origins);
}

TEST_CASE("stale manifest is rejected", "[sampler]") {
  TmpDir tmp("manifest_stale");
  auto grid = shared_grid(64, 64, 1, 1);
  TripletSpec spec;
  spec.count = 3;
  spec.tile_size = 8;
  spec.neighborhood = 16;
  const TripletSet set = sample_triplets(grid, spec);
  write_manifest(set, tmp.file("m.txt"));

  auto modified = std::make_shared<RasterGrid>(*grid);
  modified->pixels[0] += 1.0;
  REQUIRE_THROWS_WITH(read_manifest(tmp.file("m.txt"), modified),
                      Catch::Matchers::ContainsSubstring("stale"));
}

TEST_CASE("empty set writes a header-only manifest", "[sampler]") {
  TmpDir tmp("manifest_empty");
  auto grid = shared_grid(32, 32, 1);
  TripletSpec spec;
  spec.count = 0;
  spec.tile_size = 4;
  spec.neighborhood = 8;
  const TripletSet set = sample_triplets(grid, spec);
  write_manifest(set, tmp.file("m.txt"));
  const std::string bytes = detail::read_file_bytes(tmp.file("m.txt"));
  REQUIRE(bytes.rfind("#t2v-triplets v1\n", 0) == 0);
  REQUIRE(std::count(bytes.begin(), bytes.end(), '\n') == 6);  // header only
  const TripletSet back = read_manifest(tmp.file("m.txt"), grid);
  REQUIRE(back.size() == 0);
}
