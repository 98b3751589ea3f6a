#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "metaobj/core.hpp"

namespace fixtures {

// Fresh empty directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("metaobj_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

// Two images (labels 0 and 1), two unit-norm patches each, d = 4.
inline metaobj::Dataset tiny_dataset(int d = 4) {
  using namespace metaobj;
  Dataset ds;
  ds.num_classes = 2;
  ds.feature_dim = d;
  for (Index i = 0; i < 2; ++i) {
    ImageRecord im;
    im.image_id = i;
    im.scene_label = static_cast<int>(i);
    im.holistic = Vector::Unit(d, static_cast<Eigen::Index>(i));
    for (Index k = 0; k < 2; ++k) {
      PatchRecord p;
      p.patch_id = ds.patches.size();
      p.image_id = i;
      p.feature = Vector::Unit(d, static_cast<Eigen::Index>((i + k) % static_cast<Index>(d)));
      p.bbox = {0.25 + 0.5 * static_cast<double>(k), 0.5, 0.2, 0.3};
      p.level = Level::bottom;
      im.patches.push_back(p.patch_id);
      ds.patches.push_back(p);
    }
    ds.images.push_back(im);
  }
  return ds;
}

}  // namespace fixtures
