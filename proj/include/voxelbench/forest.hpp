#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxelbench/grid.hpp"

namespace voxelbench {

struct FeatureGeometryConfig {
  Vector3d sphere_radii{50.0, 25.0, 12.5};  // mm
  std::array<int, 3> boxes_per_sphere{17, 17, 16};
  double box_edge = 6.0;  // mm
};

// Fixed spatial-context sampling pattern: cube-shaped probe boxes displaced
// from the query voxel along deterministic Fibonacci-lattice directions on
// three concentric spheres.
struct FeatureGeometry {
  FeatureGeometryConfig config;
  Eigen::Matrix3Xd displacements;  // 3 x box_count, mm

  int box_count() const { return static_cast<int>(displacements.cols()); }
};

FeatureGeometry build_feature_geometry(const FeatureGeometryConfig& config = {});

struct ForestHyper {
  int tree_count = 8;
  int max_depth = 12;
  int min_leaf = 16;
  int candidate_splits = 40;
  double bootstrap_fraction = 0.7;
  int stride = 2;               // candidate-voxel subsampling, voxels
  double cylinder_radius = 50.0;  // mm, medial-axis sampling radius
  double out_of_field = -1024.0;  // feature value for probe boxes outside the scan
  std::uint64_t seed = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  Vector6d mean_offset = Vector6d::Zero();
  int sample_count = 0;

  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  const Vector6d& predict(const Eigen::Ref<const Eigen::VectorXf>& features) const;
};

struct Forest {
  std::string organ;
  FeatureGeometry geometry;
  ForestHyper hyper;
  std::vector<RegressionTree> trees;
};

// Voxel indices within cylinder_radius of the volume's central vertical axis
// (in world x/y), subsampled by stride on all axes.
std::vector<Vector3i> sample_candidate_voxels(const GridGeometry& geom, double radius = 50.0,
                                              int stride = 1);

// Entry j: mean intensity over voxels whose centers fall inside the probe
// cube centered at voxel_world + displacement_j; out_of_field when the cube
// contains no voxel center.
Eigen::VectorXd compute_feature_vector(const Grid<float>& volume, const Vector3d& voxel_world,
                                       const FeatureGeometry& geometry,
                                       double out_of_field = -1024.0);

// Signed mm distances from p to the six walls:
// (x-left, x-right, y-anterior, y-posterior, z-head, z-foot).
Vector6d compute_offset(const Vector3d& voxel_world, const BoundingBoxMM& box);

struct TrainingCase {
  const Grid<float>* volume = nullptr;
  BoundingBoxMM box;
};

Forest train_forest(const std::vector<TrainingCase>& cases, const std::string& organ,
                    const ForestHyper& hyper, const FeatureGeometryConfig& geometry = {});

struct BoxPrediction {
  BoundingBoxMM box;        // median wall votes; may violate ordering
  Vector6d spread;          // per-wall interquartile range, mm
  std::array<bool, 3> axis_ordered{true, true, true};
  std::int64_t vote_count = 0;

  bool ordered() const { return axis_ordered[0] && axis_ordered[1] && axis_ordered[2]; }
};

BoxPrediction predict_bbox(const Forest& forest, const Grid<float>& volume);

struct BoxEvaluation {
  Vector6d wall_abs_errors;
  double iou3d = 0.0;
};

BoxEvaluation evaluate_bbox(const BoundingBoxMM& pred, const BoundingBoxMM& gt);

void save_forest(const Forest& forest, const std::string& path);
Forest load_forest(const std::string& path);

}  // namespace voxelbench
