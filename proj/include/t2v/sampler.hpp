#pragma once

// Triplet sampling over a raster: anchors uniform over valid tile origins,
// neighbors uniform inside the anchor's Chebyshev neighborhood box, distant
// tiles uniform outside it (rejection sampling). Each triplet index owns an
// independent RNG substream, so sampling is reproducible for any worker
// count.

#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "t2v/detail/text.hpp"
#include "t2v/raster.hpp"
#include "t2v/rng.hpp"

namespace t2v {

struct TripletSpec {
  long count = 0;
  int tile_size = 50;
  std::optional<int> neighborhood = 100;  // nullopt = unconstrained sampling
  std::uint64_t seed = 0;
  int max_rejections = 1000;

  void validate() const {
    if (count < 0) throw UsageError("triplet count must be >= 0");
    if (tile_size < 1) throw UsageError("tile size must be >= 1");
    if (neighborhood && *neighborhood < 1)
      throw UsageError("neighborhood radius must be >= 1 when present");
    if (max_rejections < 1) throw UsageError("max_rejections must be >= 1");
  }
};

struct TripletOrigins {
  int ax = 0, ay = 0;
  int nx = 0, ny = 0;
  int dx = 0, dy = 0;

  bool operator==(const TripletOrigins&) const = default;
};

/// The training unit: three same-shaped tiles.
struct TileTriplet {
  Tile anchor;
  Tile neighbor;
  Tile distant;
};

/// Inclusive rectangle of valid tile origins.
struct OriginRect {
  int x0 = 0, x1 = 0;
  int y0 = 0, y1 = 0;

  long count() const {
    return static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1);
  }
  bool contains(int x, int y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
};

/// Tiles stay unmaterialized: the set stores origins plus a reference to the
/// source grid, and windows are extracted on demand. Keeps memory O(count).
class TripletSet {
public:
  TripletSpec spec;
  std::string raster_path;    // informational, recorded in manifests
  std::string raster_sha256;  // checksum of the canonical raster serialization
  std::shared_ptr<const RasterGrid> grid;
  std::vector<TripletOrigins> origins;

  std::size_t size() const { return origins.size(); }

  TileTriplet materialize(std::size_t i) const {
    const TripletOrigins& o = origins[i];
    return TileTriplet{
        extract_tile(*grid, o.ax, o.ay, spec.tile_size),
        extract_tile(*grid, o.nx, o.ny, spec.tile_size),
        extract_tile(*grid, o.dx, o.dy, spec.tile_size)};
  }
};

/// One tile with origin drawn uniformly over all in-bounds positions.
inline Tile sample_tile(const RasterGrid& grid, int s, Rng& rng) {
  if (s > grid.width || s > grid.height)
    throw UsageError("tile size " + std::to_string(s) +
                     " exceeds grid dimensions");
  const int x = static_cast<int>(rng.uniform_below(grid.width - s + 1));
  const int y = static_cast<int>(rng.uniform_below(grid.height - s + 1));
  return extract_tile(grid, x, y, s);
}

/// Origins of same-sized tiles whose centers are within Chebyshev distance r
/// of the anchor's center, clamped to in-bounds positions. With equal tile
/// sizes the center offset equals the origin offset.
inline OriginRect neighborhood_region(const Tile& anchor, int r,
                                      const RasterGrid& grid) {
  if (r < 1) throw UsageError("neighborhood radius must be >= 1");
  const int s = anchor.size;
  OriginRect rect;
  rect.x0 = std::max(0, anchor.origin_x - r);
  rect.x1 = std::min(grid.width - s, anchor.origin_x + r);
  rect.y0 = std::max(0, anchor.origin_y - r);
  rect.y1 = std::min(grid.height - s, anchor.origin_y + r);
  return rect;
}

namespace detail {

inline TripletOrigins sample_one_triplet(int width, int height,
                                         const TripletSpec& spec,
                                         std::uint64_t index) {
  Rng rng(spec.seed, index);
  const int s = spec.tile_size;
  const int max_x = width - s;
  const int max_y = height - s;

  TripletOrigins o;
  o.ax = static_cast<int>(rng.uniform_below(max_x + 1));
  o.ay = static_cast<int>(rng.uniform_below(max_y + 1));

  if (!spec.neighborhood) {
    o.nx = static_cast<int>(rng.uniform_below(max_x + 1));
    o.ny = static_cast<int>(rng.uniform_below(max_y + 1));
    o.dx = static_cast<int>(rng.uniform_below(max_x + 1));
    o.dy = static_cast<int>(rng.uniform_below(max_y + 1));
    return o;
  }

  const int r = *spec.neighborhood;
  const int nx0 = std::max(0, o.ax - r), nx1 = std::min(max_x, o.ax + r);
  const int ny0 = std::max(0, o.ay - r), ny1 = std::min(max_y, o.ay + r);
  o.nx = nx0 + static_cast<int>(rng.uniform_below(nx1 - nx0 + 1));
  o.ny = ny0 + static_cast<int>(rng.uniform_below(ny1 - ny0 + 1));

  for (int attempt = 0; attempt < spec.max_rejections; ++attempt) {
    const int cx = static_cast<int>(rng.uniform_below(max_x + 1));
    const int cy = static_cast<int>(rng.uniform_below(max_y + 1));
    if (std::abs(cx - o.ax) > r || std::abs(cy - o.ay) > r) {
      o.dx = cx;
      o.dy = cy;
      return o;
    }
  }
  throw DataError(
      "distant sampling rejected " + std::to_string(spec.max_rejections) +
      " candidates for anchor (" + std::to_string(o.ax) + "," +
      std::to_string(o.ay) + "); the neighborhood covers nearly the whole "
      "grid — use a smaller radius or a larger raster");
}

}  // namespace detail

/// Samples spec.count triplets. Triplet i is a pure function of
/// (grid shape, spec, i), so results are identical for every worker count
/// and ordering is by index.
inline TripletSet sample_triplets(std::shared_ptr<const RasterGrid> grid,
                                  const TripletSpec& spec, int workers = 1,
                                  const std::string& raster_path = "") {
  spec.validate();
  if (!grid) throw UsageError("sample_triplets: null grid");
  if (spec.tile_size > grid->width || spec.tile_size > grid->height)
    throw UsageError("tile size exceeds grid dimensions");

  TripletSet set;
  set.spec = spec;
  set.raster_path = raster_path;
  set.raster_sha256 = raster_checksum(*grid);
  set.grid = grid;
  set.origins.resize(static_cast<std::size_t>(spec.count));

  const std::size_t n = set.origins.size();
  const int width = grid->width, height = grid->height;
  auto fill_range = [&](std::size_t begin, std::size_t end,
                        std::exception_ptr& error) {
    try {
      for (std::size_t i = begin; i < end; ++i)
        set.origins[i] = detail::sample_one_triplet(width, height, spec, i);
    } catch (...) {
      error = std::current_exception();
    }
  };

  if (workers <= 1 || n < 2) {
    std::exception_ptr error;
    fill_range(0, n, error);
    if (error) std::rethrow_exception(error);
  } else {
    const std::size_t nthreads = std::min<std::size_t>(workers, n);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(nthreads);
    const std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      threads.emplace_back(fill_range, begin, end, std::ref(errors[t]));
    }
    for (auto& thread : threads) thread.join();
    for (const auto& error : errors)
      if (error) std::rethrow_exception(error);
  }
  return set;
}

// --------------------------------------------------------------------------
// Manifest persistence
// --------------------------------------------------------------------------

inline std::string serialize_manifest(const TripletSet& set) {
  std::string out;
  out += "#t2v-triplets v1\n";
  out += "#raster=" + set.raster_path + "\n";
  out += "#raster_sha256=" + set.raster_sha256 + "\n";
  out += "#tile_size=" + std::to_string(set.spec.tile_size) + "\n";
  out += "#neighborhood=" +
         (set.spec.neighborhood ? std::to_string(*set.spec.neighborhood)
                                : std::string("none")) +
         "\n";
  out += "#seed=" + std::to_string(set.spec.seed) + "\n";
  for (const TripletOrigins& o : set.origins) {
    out += std::to_string(o.ax) + "," + std::to_string(o.ay) + "," +
           std::to_string(o.nx) + "," + std::to_string(o.ny) + "," +
           std::to_string(o.dx) + "," + std::to_string(o.dy) + "\n";
  }
  return out;
}

inline void write_manifest(const TripletSet& set, const std::string& path) {
  detail::write_file_bytes(path, serialize_manifest(set));
}

namespace detail {

inline std::string manifest_header_value(const std::string& line,
                                         const std::string& key,
                                         const std::string& context) {
  if (line.rfind(key, 0) != 0)
    throw DataError(context + ": expected header line starting with \"" +
                    key + "\", got \"" + line + "\"");
  return line.substr(key.size());
}

}  // namespace detail

/// Reads a manifest and rebinds it to the given grid. The recorded raster
/// checksum must match the grid, otherwise the manifest is stale.
inline TripletSet read_manifest(const std::string& path,
                                std::shared_ptr<const RasterGrid> grid) {
  if (!grid) throw UsageError("read_manifest: null grid");
  const std::string bytes = detail::read_file_bytes(path);
  std::istringstream in(bytes);
  std::string line;

  auto next_line = [&](const char* what) {
    if (!std::getline(in, line))
      throw DataError(path + ": truncated manifest, missing " +
                      std::string(what));
    return line;
  };

  if (next_line("version line") != "#t2v-triplets v1")
    throw DataError(path + ": not a t2v-triplets v1 manifest");

  TripletSet set;
  set.grid = grid;
  set.raster_path =
      detail::manifest_header_value(next_line("raster line"), "#raster=", path);
  set.raster_sha256 = detail::manifest_header_value(
      next_line("checksum line"), "#raster_sha256=", path);
  const std::string tile_size = detail::manifest_header_value(
      next_line("tile_size line"), "#tile_size=", path);
  const std::string neighborhood = detail::manifest_header_value(
      next_line("neighborhood line"), "#neighborhood=", path);
  const std::string seed_text =
      detail::manifest_header_value(next_line("seed line"), "#seed=", path);

  set.spec.tile_size =
      static_cast<int>(detail::parse_long(tile_size, "tile_size", path));
  if (neighborhood == "none")
    set.spec.neighborhood = std::nullopt;
  else
    set.spec.neighborhood =
        static_cast<int>(detail::parse_long(neighborhood, "neighborhood", path));
  set.spec.seed = static_cast<std::uint64_t>(
      detail::parse_long(seed_text, "seed", path));

  const std::string actual = raster_checksum(*grid);
  if (actual != set.raster_sha256)
    throw DataError(path + ": stale manifest — raster checksum " + actual +
                    " does not match recorded " + set.raster_sha256);

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv(line);
    if (fields.size() != 6)
      throw DataError(path + ": manifest row needs 6 fields: \"" + line +
                      "\"");
    TripletOrigins o;
    o.ax = static_cast<int>(detail::parse_long(fields[0], "origin", path));
    o.ay = static_cast<int>(detail::parse_long(fields[1], "origin", path));
    o.nx = static_cast<int>(detail::parse_long(fields[2], "origin", path));
    o.ny = static_cast<int>(detail::parse_long(fields[3], "origin", path));
    o.dx = static_cast<int>(detail::parse_long(fields[4], "origin", path));
    o.dy = static_cast<int>(detail::parse_long(fields[5], "origin", path));
    const int s = set.spec.tile_size;
    if (o.ax < 0 || o.ay < 0 || o.nx < 0 || o.ny < 0 || o.dx < 0 ||
        o.dy < 0 || o.ax + s > grid->width || o.nx + s > grid->width ||
        o.dx + s > grid->width || o.ay + s > grid->height ||
        o.ny + s > grid->height || o.dy + s > grid->height)
      throw DataError(path + ": manifest origin out of bounds: \"" + line +
                      "\"");
    set.origins.push_back(o);
  }
  set.spec.count = static_cast<long>(set.origins.size());
  return set;
}

}  // namespace t2v
