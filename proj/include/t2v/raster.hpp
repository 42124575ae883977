#pragma once

// Multi-band raster grids, aligned label grids, square tile windows, and a
// synthetic landscape generator. Pixel buffers are band-sequential
// row-major: sample (x, y, b) lives at index (b*height + y)*width + x.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "t2v/detail/binio.hpp"
#include "t2v/detail/sha256.hpp"
#include "t2v/errors.hpp"
#include "t2v/rng.hpp"

namespace t2v {

inline constexpr std::uint16_t kUnlabeled = 0xFFFF;

/// Per-band normalization statistics.
struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct RasterGrid {
  int width = 0;
  int height = 0;
  int bands = 0;
  std::vector<double> pixels;  // band-sequential row-major
  std::optional<BandStats> band_stats;

  double at(int x, int y, int b) const {
    return pixels[(static_cast<std::size_t>(b) * height + y) * width + x];
  }
  double& at(int x, int y, int b) {
    return pixels[(static_cast<std::size_t>(b) * height + y) * width + x];
  }

  void validate() const {
    if (width < 1 || height < 1 || bands < 1)
      throw UsageError("raster dimensions must be at least 1x1x1");
    if (pixels.size() !=
        static_cast<std::size_t>(width) * height * bands)
      throw UsageError("raster pixel buffer length does not match shape");
    for (const double v : pixels)
      if (!std::isfinite(v))
        throw NumericError("raster contains a non-finite sample");
  }
};

struct LabelGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> classes;  // row-major; kUnlabeled = no label

  std::uint16_t at(int x, int y) const {
    return classes[static_cast<std::size_t>(y) * width + x];
  }
  std::uint16_t& at(int x, int y) {
    return classes[static_cast<std::size_t>(y) * width + x];
  }
};

/// A square s x s multi-band window cut from a raster. Samples use the same
/// band-sequential row-major layout as the source grid.
struct Tile {
  int size = 0;
  int bands = 0;
  int origin_x = 0;
  int origin_y = 0;
  std::vector<double> samples;

  double at(int x, int y, int b) const {
    return samples[(static_cast<std::size_t>(b) * size + y) * size + x];
  }
  /// Tile center in real pixel coordinates (origin is the top-left pixel).
  double center_x() const { return origin_x + (size - 1) / 2.0; }
  double center_y() const { return origin_y + (size - 1) / 2.0; }
};

// --------------------------------------------------------------------------
// T2VR / T2VL persistence
// --------------------------------------------------------------------------

/// Serializes a grid to the T2VR byte stream: magic "T2VR", version u16=1,
/// dtype u8 (1 = float32), reserved u8=0, bands u32, height u32, width u32,
/// then width*height float32 samples per band, band-sequential row-major,
/// all little-endian.
inline std::string serialize_raster(const RasterGrid& grid) {
  grid.validate();
  std::string out;
  out.reserve(20 + grid.pixels.size() * 4);
  out.append("T2VR", 4);
  detail::put_u16(out, 1);
  detail::put_u8(out, 1);
  detail::put_u8(out, 0);
  detail::put_u32(out, static_cast<std::uint32_t>(grid.bands));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.height));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.width));
  for (const double v : grid.pixels)
    detail::put_f32(out, static_cast<float>(v));
  return out;
}

inline RasterGrid deserialize_raster(const std::string& bytes,
                                     const std::string& context) {
  detail::ByteReader r(bytes, context);
  r.expect_magic("T2VR");
  const std::uint16_t version = r.u16("version");
  if (version != 1)
    throw DataError(context + ": unsupported version " +
                    std::to_string(version));
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype != 1)
    throw DataError(context + ": unsupported dtype " + std::to_string(dtype));
  r.u8("reserved");
  RasterGrid grid;
  grid.bands = static_cast<int>(r.u32("bands"));
  grid.height = static_cast<int>(r.u32("height"));
  grid.width = static_cast<int>(r.u32("width"));
  if (grid.bands < 1 || grid.height < 1 || grid.width < 1)
    throw DataError(context + ": dimensions must be at least 1x1x1");
  const std::size_t count =
      static_cast<std::size_t>(grid.width) * grid.height * grid.bands;
  if (r.remaining() != count * 4)
    throw DataError(context + ": payload holds " +
                    std::to_string(r.remaining() / 4) + " samples, header " +
                    "declares " + std::to_string(count));
  grid.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    grid.pixels[i] = static_cast<double>(r.f32("samples"));
  grid.validate();
  return grid;
}

inline void save_raster(const RasterGrid& grid, const std::string& path) {
  detail::write_file_bytes(path, serialize_raster(grid));
}

inline RasterGrid load_raster(const std::string& path) {
  return deserialize_raster(detail::read_file_bytes(path), path);
}

/// Checksum of the canonical T2VR serialization. Stable across save/load
/// because all grids produced by this library hold float32-exact samples.
inline std::string raster_checksum(const RasterGrid& grid) {
  return detail::sha256_hex(serialize_raster(grid));
}

/// T2VL byte stream: magic "T2VL", version u16=1, height u32, width u32,
/// then u16 class ids row-major; 0xFFFF = unlabeled.
inline std::string serialize_labels(const LabelGrid& labels) {
  std::string out;
  out.reserve(14 + labels.classes.size() * 2);
  out.append("T2VL", 4);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(labels.height));
  detail::put_u32(out, static_cast<std::uint32_t>(labels.width));
  for (const std::uint16_t c : labels.classes) detail::put_u16(out, c);
  return out;
}

inline LabelGrid deserialize_labels(const std::string& bytes,
                                    const std::string& context) {
  detail::ByteReader r(bytes, context);
  r.expect_magic("T2VL");
  const std::uint16_t version = r.u16("version");
  if (version != 1)
    throw DataError(context + ": unsupported version " +
                    std::to_string(version));
  LabelGrid labels;
  labels.height = static_cast<int>(r.u32("height"));
  labels.width = static_cast<int>(r.u32("width"));
  if (labels.height < 1 || labels.width < 1)
    throw DataError(context + ": dimensions must be at least 1x1");
  const std::size_t count =
      static_cast<std::size_t>(labels.width) * labels.height;
  if (r.remaining() != count * 2)
    throw DataError(context + ": payload holds " +
                    std::to_string(r.remaining() / 2) + " labels, header " +
                    "declares " + std::to_string(count));
  labels.classes.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    labels.classes[i] = r.u16("classes");
  return labels;
}

inline void save_labels(const LabelGrid& labels, const std::string& path) {
  detail::write_file_bytes(path, serialize_labels(labels));
}

inline LabelGrid load_labels(const std::string& path) {
  return deserialize_labels(detail::read_file_bytes(path), path);
}

// --------------------------------------------------------------------------
// Windowing and labeling
// --------------------------------------------------------------------------

inline Tile extract_tile(const RasterGrid& grid, int x, int y, int s) {
  if (s < 1) throw UsageError("tile size must be at least 1");
  if (x < 0 || y < 0 || x + s > grid.width || y + s > grid.height)
    throw UsageError("tile window (" + std::to_string(x) + "," +
                     std::to_string(y) + ") size " + std::to_string(s) +
                     " out of bounds for " + std::to_string(grid.width) + "x" +
                     std::to_string(grid.height) + " grid");
  Tile tile;
  tile.size = s;
  tile.bands = grid.bands;
  tile.origin_x = x;
  tile.origin_y = y;
  tile.samples.resize(static_cast<std::size_t>(s) * s * grid.bands);
  for (int b = 0; b < grid.bands; ++b)
    for (int ty = 0; ty < s; ++ty) {
      const double* src =
          grid.pixels.data() +
          (static_cast<std::size_t>(b) * grid.height + y + ty) * grid.width +
          x;
      double* dst =
          tile.samples.data() + (static_cast<std::size_t>(b) * s + ty) * s;
      std::copy(src, src + s, dst);
    }
  return tile;
}

/// Modal class over the window, with unlabeled pixels excluded from the
/// vote. With a purity threshold t, the modal class is returned only when
/// it covers more than t of the whole window; otherwise kUnlabeled.
/// Ties go to the lowest class id.
inline std::uint16_t tile_label(const LabelGrid& labels, int x, int y, int s,
                                std::optional<double> purity_threshold =
                                    std::nullopt) {
  if (x < 0 || y < 0 || x + s > labels.width || y + s > labels.height)
    throw UsageError("label window out of bounds");
  std::unordered_map<std::uint16_t, int> counts;
  for (int ty = 0; ty < s; ++ty)
    for (int tx = 0; tx < s; ++tx) {
      const std::uint16_t c = labels.at(x + tx, y + ty);
      if (c != kUnlabeled) ++counts[c];
    }
  if (counts.empty()) return kUnlabeled;
  std::uint16_t best = kUnlabeled;
  int best_count = -1;
  for (const auto& [cls, count] : counts)
    if (count > best_count || (count == best_count && cls < best)) {
      best = cls;
      best_count = count;
    }
  if (purity_threshold) {
    const double fraction =
        static_cast<double>(best_count) / (static_cast<double>(s) * s);
    if (!(fraction > *purity_threshold)) return kUnlabeled;
  }
  return best;
}

// --------------------------------------------------------------------------
// Synthetic landscapes
// --------------------------------------------------------------------------

/// Recipe for a synthetic landscape: a Voronoi partition of class regions,
/// per-class spectral means, white Gaussian noise, and an optional smooth
/// illumination field shared across bands. The field's amplitude equals
/// noise_sigma and smooth_sigma sets its correlation length; either knob at
/// zero disables the respective term.
struct SyntheticSpec {
  int width = 512;
  int height = 512;
  int bands = 4;
  int num_classes = 5;
  int region_seeds = 48;
  std::vector<std::vector<double>> class_spectra;  // [class][band]
  double noise_sigma = 0.5;
  double smooth_sigma = 0.0;

  void validate() const {
    if (width < 1 || height < 1 || bands < 1)
      throw UsageError("synthetic dimensions must be at least 1x1x1");
    if (num_classes < 1) throw UsageError("num_classes must be at least 1");
    if (region_seeds < num_classes)
      throw UsageError("region_seeds must be at least num_classes");
    if (noise_sigma < 0) throw UsageError("noise_sigma must be >= 0");
    if (smooth_sigma < 0) throw UsageError("smooth_sigma must be >= 0");
    if (class_spectra.size() != static_cast<std::size_t>(num_classes))
      throw UsageError("class_spectra must have one row per class");
    for (const auto& row : class_spectra)
      if (row.size() != static_cast<std::size_t>(bands))
        throw UsageError("class_spectra rows must have one entry per band");
  }
};

/// Evenly spread spectra with band-dependent structure, float32-exact.
inline std::vector<std::vector<double>> default_class_spectra(int num_classes,
                                                              int bands,
                                                              Rng& rng) {
  std::vector<std::vector<double>> spectra(num_classes,
                                           std::vector<double>(bands));
  for (int c = 0; c < num_classes; ++c)
    for (int b = 0; b < bands; ++b) {
      const double base = 2.0 * c + ((c + b) % 2 ? 1.5 : 0.0);
      // quarter-unit jitter keeps classes spectrally distinct but irregular
      const double jitter = 0.25 * std::floor(4.0 * rng.uniform_real()) / 4.0;
      spectra[c][b] = base + jitter;
    }
  return spectra;
}

/// Smallest Euclidean distance between any two class spectra vectors.
inline double min_interclass_gap(
    const std::vector<std::vector<double>>& spectra) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < spectra.size(); ++i)
    for (std::size_t j = i + 1; j < spectra.size(); ++j) {
      double sq = 0;
      for (std::size_t b = 0; b < spectra[i].size(); ++b) {
        const double d = spectra[i][b] - spectra[j][b];
        sq += d * d;
      }
      best = std::min(best, std::sqrt(sq));
    }
  return best;
}

namespace detail {

/// Separable Gaussian blur with edge replication, kernel radius ceil(3*sigma).
inline void gaussian_blur_inplace(std::vector<double>& field, int width,
                                  int height, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (radius < 1) return;
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  std::vector<double> tmp(field.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, width - 1);
        acc += kernel[i + radius] * field[static_cast<std::size_t>(y) * width + xx];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  for (int x = 0; x < width; ++x)
    for (int y = 0; y < height; ++y) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, height - 1);
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(yy) * width + x];
      }
      field[static_cast<std::size_t>(y) * width + x] = acc;
    }
}

}  // namespace detail

/// Deterministic synthetic landscape. The label grid is a Voronoi partition
/// of region_seeds sites (classes drawn uniformly); each pixel is its class
/// spectrum plus white noise plus the shared illumination field. Samples
/// are quantized to float32 so persistence round-trips bit-exactly.
inline std::pair<RasterGrid, LabelGrid> generate_synthetic(
    const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();

  // substream 0: Voronoi sites and classes; 1: illumination; 2: pixel noise
  Rng site_rng(seed, 0);
  struct Site {
    int x, y;
    std::uint16_t cls;
  };
  std::vector<Site> sites(spec.region_seeds);
  for (auto& site : sites) {
    site.x = static_cast<int>(site_rng.uniform_below(spec.width));
    site.y = static_cast<int>(site_rng.uniform_below(spec.height));
    site.cls = static_cast<std::uint16_t>(
        site_rng.uniform_below(spec.num_classes));
  }

  LabelGrid labels;
  labels.width = spec.width;
  labels.height = spec.height;
  labels.classes.resize(static_cast<std::size_t>(spec.width) * spec.height);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      long best = std::numeric_limits<long>::max();
      std::uint16_t cls = 0;
      for (const auto& site : sites) {
        const long dx = x - site.x;
        const long dy = y - site.y;
        const long d2 = dx * dx + dy * dy;
        if (d2 < best) {  // ties keep the earliest site
          best = d2;
          cls = site.cls;
        }
      }
      labels.at(x, y) = cls;
    }

  const std::size_t plane =
      static_cast<std::size_t>(spec.width) * spec.height;
  std::vector<double> illumination;
  if (spec.smooth_sigma > 0 && spec.noise_sigma > 0) {
    Rng field_rng(seed, 1);
    illumination.resize(plane);
    for (double& v : illumination) v = field_rng.gaussian();
    detail::gaussian_blur_inplace(illumination, spec.width, spec.height,
                                  spec.smooth_sigma);
    double mean = 0;
    for (const double v : illumination) mean += v;
    mean /= static_cast<double>(plane);
    double var = 0;
    for (const double v : illumination) var += (v - mean) * (v - mean);
    var /= static_cast<double>(plane);
    const double scale =
        var > 0 ? spec.noise_sigma / std::sqrt(var) : 0.0;
    for (double& v : illumination) v = (v - mean) * scale;
  }

  RasterGrid grid;
  grid.width = spec.width;
  grid.height = spec.height;
  grid.bands = spec.bands;
  grid.pixels.resize(plane * spec.bands);
  Rng noise_rng(seed, 2);
  for (int b = 0; b < spec.bands; ++b)
    for (std::size_t i = 0; i < plane; ++i) {
      double v = spec.class_spectra[labels.classes[i]][b];
      if (spec.noise_sigma > 0) v += spec.noise_sigma * noise_rng.gaussian();
      if (!illumination.empty()) v += illumination[i];
      grid.pixels[b * plane + i] = static_cast<double>(static_cast<float>(v));
    }
  return {std::move(grid), std::move(labels)};
}

// --------------------------------------------------------------------------
// Normalization statistics
// --------------------------------------------------------------------------

/// Per-band mean and stddev over uniformly sampled pixel positions
/// (a full census when sample_count covers the grid). Population stddev,
/// floored at 1e-6.
inline BandStats normalize_stats(const RasterGrid& grid, int sample_count,
                                 std::uint64_t seed) {
  if (sample_count < 1) throw UsageError("sample_count must be at least 1");
  const std::size_t total =
      static_cast<std::size_t>(grid.width) * grid.height;
  std::vector<std::size_t> positions;
  if (static_cast<std::size_t>(sample_count) >= total) {
    positions.resize(total);
    for (std::size_t i = 0; i < total; ++i) positions[i] = i;
  } else {
    Rng rng(seed, 0);
    positions.resize(sample_count);
    for (auto& p : positions)
      p = static_cast<std::size_t>(rng.uniform_below(total));
  }

  BandStats stats;
  stats.mean.resize(grid.bands);
  stats.stddev.resize(grid.bands);
  const std::size_t n = positions.size();
  for (int b = 0; b < grid.bands; ++b) {
    const double* plane = grid.pixels.data() + static_cast<std::size_t>(b) * total;
    double mean = 0;
    for (const std::size_t p : positions) mean += plane[p];
    mean /= static_cast<double>(n);
    double var = 0;
    for (const std::size_t p : positions) {
      const double d = plane[p] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    stats.mean[b] = mean;
    stats.stddev[b] = std::max(std::sqrt(var), 1e-6);
  }
  return stats;
}

}  // namespace t2v
