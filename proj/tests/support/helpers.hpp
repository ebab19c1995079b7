#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "voxelbench/grid.hpp"
#include "voxelbench/rng.hpp"

namespace vbtest {

// Scratch directory wiped per construction; unique per tag.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = (std::filesystem::temp_directory_path() / ("voxelbench_test_" + tag)).string();
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }

 private:
  std::string path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

template <typename T>
voxelbench::Grid<T> random_grid(voxelbench::Rng& rng, int nx, int ny, int nz, double lo,
                                double hi, double spacing = 2.0,
                                const std::string& orientation = "RAI") {
  voxelbench::GridGeometry g;
  g.dims = {nx, ny, nz};
  g.spacing = voxelbench::Vector3d::Constant(spacing);
  g.origin = voxelbench::Vector3d::Zero();
  g.orientation = orientation;
  voxelbench::Grid<T> out(g);
  for (std::int64_t i = 0; i < out.voxels.size(); ++i) {
    out.voxels[i] = static_cast<T>(rng.uniform(lo, hi));
  }
  return out;
}

}  // namespace vbtest
