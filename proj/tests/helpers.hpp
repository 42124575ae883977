#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "t2v/raster.hpp"
#include "t2v/rng.hpp"

namespace t2v_test {

/// Fresh scratch directory under the system temp dir, removed on
/// destruction.
class TmpDir {
public:
  explicit TmpDir(const std::string& tag) {
    path_ = (std::filesystem::temp_directory_path() /
             ("t2v_" + tag + "_" + std::to_string(::getpid())))
                .string();
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TmpDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }
  const std::string& path() const { return path_; }

private:
  std::string path_;
};

inline t2v::RasterGrid make_grid(int width, int height, int bands,
                                 std::uint64_t seed = 42) {
  t2v::RasterGrid grid;
  grid.width = width;
  grid.height = height;
  grid.bands = bands;
  grid.pixels.resize(static_cast<std::size_t>(width) * height * bands);
  t2v::Rng rng(seed);
  for (double& v : grid.pixels)
    v = static_cast<double>(static_cast<float>(rng.gaussian()));
  return grid;
}

inline t2v::BandStats identity_stats(int bands) {
  t2v::BandStats stats;
  stats.mean.assign(bands, 0.0);
  stats.stddev.assign(bands, 1.0);
  return stats;
}

inline std::vector<double> random_vector(t2v::Rng& rng, int n,
                                         double scale = 1.0) {
  std::vector<double> out(n);
  for (double& v : out) v = scale * rng.gaussian();
  return out;
}

}  // namespace t2v_test
