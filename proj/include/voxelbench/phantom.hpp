#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "voxelbench/grid.hpp"
#include "voxelbench/raster_io.hpp"

namespace voxelbench {

enum class Difficulty { easy, hard };

struct PhantomOrganSpec {
  std::string name;
  int label = 0;
  Vector3d center{0, 0, 0};         // nominal center, mm
  Vector3d semi_axes_min{8, 8, 8};  // mm
  Vector3d semi_axes_max{12, 12, 12};
  double center_jitter = 6.0;  // mm, uniform per axis
  double intensity_mean = 100.0;  // HU-like
  double intensity_std = 5.0;     // per-case variation
};

// Unlabeled context structure (bone-like spine, vessels, ...): rendered into
// the intensities wherever no organ claims the voxel, never into the labels.
struct PhantomLandmark {
  Vector3d center{0, 0, 0};
  Vector3d semi_axes{1, 1, 1};
  double intensity = 300.0;
};

// Synthetic CT-like scene: ellipsoid organ analogues with exact analytic
// labels, standing in for clinical data. A body envelope (air outside) and
// fixed landmarks give every voxel the kind of global intensity context a
// real scan would carry.
struct PhantomSpec {
  Vector3i volume_dims{64, 64, 64};
  double spacing = 2.0;  // mm isotropic
  double background_intensity = 40.0;
  double noise_std = 8.0;
  Difficulty difficulty = Difficulty::easy;
  // Shared per-case translation of the whole scene (body, landmarks, organs);
  // per-organ center_jitter is the residual on top of it.
  double global_jitter = 0.0;
  std::vector<PhantomOrganSpec> organs;

  bool body_envelope = false;
  Vector3d body_center{0, 0, 0};
  Vector3d body_semi_axes{1, 1, 1};
  double air_intensity = -1000.0;
  std::vector<PhantomLandmark> landmarks;

  void validate() const;
  std::map<std::string, int> organ_label_map() const;
};

// Five-organ default layout sized for the 64^3 at 2 mm desk-scale case.
PhantomSpec default_phantom_spec(Difficulty difficulty = Difficulty::easy);

PhantomSpec load_phantom_spec(const std::string& path);
void save_phantom_spec(const PhantomSpec& spec, const std::string& path);

struct PhantomCase {
  std::string case_id;
  Grid<std::int16_t> volume;
  LabelMask labels;
  std::map<std::string, BoundingBoxMM> gt_boxes;
  std::uint64_t seed = 0;
};

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t seed,
                          const std::string& case_id = {});

// Writes n cases plus a manifest into out_dir and returns the loaded manifest.
DatasetManifest generate_dataset(const PhantomSpec& spec, int n, std::uint64_t seed,
                                 const std::string& out_dir);

}  // namespace voxelbench
