#include "voxelbench/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "voxelbench/rng.hpp"
#include "voxelbench/stats.hpp"

namespace voxelbench {

namespace {

constexpr const char* kForestMagic = "FORMAT voxelbench-rrf-1";

std::string fmt_d(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

FeatureGeometry build_feature_geometry(const FeatureGeometryConfig& config) {
  for (int s = 0; s < 3; ++s) {
    if (!(config.sphere_radii[s] > 0.0)) {
      throw data_error("sphere radius must be > 0, got " + std::to_string(config.sphere_radii[s]));
    }
    if (config.boxes_per_sphere[s] < 1) {
      throw data_error("each sphere needs at least one probe box");
    }
  }
  if (!(config.box_edge > 0.0)) {
    throw data_error("probe box edge must be > 0, got " + std::to_string(config.box_edge));
  }

  FeatureGeometry g;
  g.config = config;
  const int total = config.boxes_per_sphere[0] + config.boxes_per_sphere[1] +
                    config.boxes_per_sphere[2];
  g.displacements.resize(3, total);

  // Fibonacci lattice per sphere: evenly-spread deterministic directions.
  constexpr double golden_angle = 2.39996322972865332;  // pi * (3 - sqrt 5)
  int col = 0;
  for (int s = 0; s < 3; ++s) {
    const int n = config.boxes_per_sphere[s];
    for (int i = 0; i < n; ++i, ++col) {
      const double z = 1.0 - 2.0 * (i + 0.5) / n;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden_angle * i;
      Vector3d dir(r * std::cos(phi), r * std::sin(phi), z);
      dir.normalize();
      g.displacements.col(col) = config.sphere_radii[s] * dir;
    }
  }
  return g;
}

std::vector<Vector3i> sample_candidate_voxels(const GridGeometry& geom, double radius,
                                              int stride) {
  geom.validate();
  if (stride < 1) {
    throw data_error("candidate stride must be >= 1");
  }
  const double cx = geom.origin[0] + (geom.dims[0] - 1) * geom.spacing[0] / 2.0;
  const double cy = geom.origin[1] + (geom.dims[1] - 1) * geom.spacing[1] / 2.0;
  const double r2 = radius * radius;

  std::vector<Vector3i> out;
  for (int k = 0; k < geom.dims[2]; k += stride)
    for (int j = 0; j < geom.dims[1]; j += stride)
      for (int i = 0; i < geom.dims[0]; i += stride) {
        const double dx = geom.origin[0] + i * geom.spacing[0] - cx;
        const double dy = geom.origin[1] + j * geom.spacing[1] - cy;
        if (dx * dx + dy * dy <= r2) out.emplace_back(i, j, k);
      }
  if (out.empty()) {
    throw data_error("no candidate voxels: radius " + std::to_string(radius) +
                     " mm selects nothing in this volume");
  }
  return out;
}

Eigen::VectorXd compute_feature_vector(const Grid<float>& volume, const Vector3d& voxel_world,
                                       const FeatureGeometry& geometry, double out_of_field) {
  const GridGeometry& g = volume.geom;
  const double half = geometry.config.box_edge / 2.0;
  Eigen::VectorXd features(geometry.box_count());

  for (int b = 0; b < geometry.box_count(); ++b) {
    const Vector3d center = voxel_world + geometry.displacements.col(b);
    int lo[3], hi[3];
    bool empty = false;
    for (int a = 0; a < 3; ++a) {
      // Voxel centers at origin + i*spacing inside [center-half, center+half].
      const double lo_f = (center[a] - half - g.origin[a]) / g.spacing[a];
      const double hi_f = (center[a] + half - g.origin[a]) / g.spacing[a];
      lo[a] = static_cast<int>(std::ceil(lo_f - 1e-12));
      hi[a] = static_cast<int>(std::floor(hi_f + 1e-12));
      if (lo[a] < 0) lo[a] = 0;
      if (hi[a] > g.dims[a] - 1) hi[a] = g.dims[a] - 1;
      if (lo[a] > hi[a]) {
        empty = true;
        break;
      }
    }
    if (empty) {
      features[b] = out_of_field;
      continue;
    }
    double sum = 0.0;
    std::int64_t count = 0;
    for (int k = lo[2]; k <= hi[2]; ++k)
      for (int j = lo[1]; j <= hi[1]; ++j) {
        const std::int64_t base = volume.index(0, j, k);
        for (int i = lo[0]; i <= hi[0]; ++i) {
          sum += volume.voxels[base + i];
          ++count;
        }
      }
    features[b] = sum / static_cast<double>(count);
  }
  return features;
}

Vector6d compute_offset(const Vector3d& p, const BoundingBoxMM& box) {
  Vector6d d;
  d << p[0] - box.left, p[0] - box.right, p[1] - box.anterior, p[1] - box.posterior,
      p[2] - box.head, p[2] - box.foot;
  return d;
}

const Vector6d& RegressionTree::predict(const Eigen::Ref<const Eigen::VectorXf>& features) const {
  int n = 0;
  while (!nodes[n].is_leaf()) {
    n = features[nodes[n].feature] <= nodes[n].threshold ? nodes[n].left : nodes[n].right;
  }
  return nodes[n].mean_offset;
}

namespace {

struct SampleSet {
  Eigen::MatrixXf features;                 // box_count x n
  Eigen::Matrix<double, 6, Eigen::Dynamic> targets;  // 6 x n
};

SampleSet collect_samples(const std::vector<TrainingCase>& cases, const FeatureGeometry& geometry,
                          const ForestHyper& hyper) {
  std::int64_t total = 0;
  std::vector<std::vector<Vector3i>> candidates(cases.size());
  for (std::size_t c = 0; c < cases.size(); ++c) {
    candidates[c] =
        sample_candidate_voxels(cases[c].volume->geom, hyper.cylinder_radius, hyper.stride);
    total += static_cast<std::int64_t>(candidates[c].size());
  }

  SampleSet set;
  set.features.resize(geometry.box_count(), total);
  set.targets.resize(6, total);
  std::int64_t col = 0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const Grid<float>& vol = *cases[c].volume;
    for (const Vector3i& v : candidates[c]) {
      const Vector3d p = vol.geom.world(v[0], v[1], v[2]);
      set.features.col(col) =
          compute_feature_vector(vol, p, geometry, hyper.out_of_field).cast<float>();
      set.targets.col(col) = compute_offset(p, cases[c].box);
      ++col;
    }
  }
  return set;
}

struct TreeGrower {
  const SampleSet& set;
  const ForestHyper& hyper;
  Rng rng;
  std::vector<TreeNode> nodes;

  // Sum of per-component squared deviation from the mean, over samples [b,e).
  // Returns {sse, sum} for reuse.
  std::pair<double, Vector6d> node_sse(const std::vector<std::int64_t>& idx, std::int64_t b,
                                       std::int64_t e) const {
    Vector6d sum = Vector6d::Zero();
    double sq = 0.0;
    for (std::int64_t i = b; i < e; ++i) {
      const auto y = set.targets.col(idx[i]);
      sum += y;
      sq += y.squaredNorm();
    }
    const double n = static_cast<double>(e - b);
    return {sq - sum.squaredNorm() / n, sum};
  }

  int grow(std::vector<std::int64_t>& idx, std::int64_t b, std::int64_t e, int depth) {
    const std::int64_t n = e - b;
    auto [sse, sum] = node_sse(idx, b, e);

    const auto make_leaf = [&]() {
      TreeNode leaf;
      leaf.mean_offset = sum / static_cast<double>(n);
      leaf.sample_count = static_cast<int>(n);
      nodes.push_back(leaf);
      return static_cast<int>(nodes.size() - 1);
    };

    if (depth >= hyper.max_depth || n < 2 * hyper.min_leaf || sse <= 1e-12) {
      return make_leaf();
    }

    // Random (feature, threshold) candidates; keep the one with the lowest
    // summed child SSE, i.e. the largest variance reduction.
    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = std::numeric_limits<double>::infinity();
    for (int cand = 0; cand < hyper.candidate_splits; ++cand) {
      const int f = static_cast<int>(rng.uniform_int(set.features.rows()));
      float fmin = std::numeric_limits<float>::max();
      float fmax = std::numeric_limits<float>::lowest();
      for (std::int64_t i = b; i < e; ++i) {
        const float v = set.features(f, idx[i]);
        fmin = std::min(fmin, v);
        fmax = std::max(fmax, v);
      }
      if (!(fmax > fmin)) continue;
      const double thr = rng.uniform(fmin, fmax);

      std::int64_t nl = 0;
      Vector6d sum_l = Vector6d::Zero();
      double sq_l = 0.0;
      for (std::int64_t i = b; i < e; ++i) {
        if (set.features(f, idx[i]) <= thr) {
          const auto y = set.targets.col(idx[i]);
          sum_l += y;
          sq_l += y.squaredNorm();
          ++nl;
        }
      }
      const std::int64_t nr = n - nl;
      if (nl < hyper.min_leaf || nr < hyper.min_leaf) continue;
      const Vector6d sum_r = sum - sum_l;
      // child SSE = (sq_l - |sum_l|^2/nl) + (sq_r - |sum_r|^2/nr), with
      // sq_r recovered from the parent's total square sum.
      const double sq_total = sse + sum.squaredNorm() / static_cast<double>(n);
      const double total_sq = (sq_l - sum_l.squaredNorm() / static_cast<double>(nl)) +
                              ((sq_total - sq_l) - sum_r.squaredNorm() / static_cast<double>(nr));
      if (total_sq < best_score) {
        best_score = total_sq;
        best_feature = f;
        best_threshold = thr;
      }
    }

    if (best_feature < 0 || best_score >= sse) {
      return make_leaf();
    }

    const auto mid = std::partition(idx.begin() + b, idx.begin() + e, [&](std::int64_t i) {
      return set.features(best_feature, i) <= best_threshold;
    });
    const std::int64_t m = mid - idx.begin();

    TreeNode split;
    split.feature = best_feature;
    split.threshold = best_threshold;
    nodes.push_back(split);
    const int self = static_cast<int>(nodes.size() - 1);
    nodes[self].left = grow(idx, b, m, depth + 1);
    nodes[self].right = grow(idx, m, e, depth + 1);
    return self;
  }
};

}  // namespace

Forest train_forest(const std::vector<TrainingCase>& cases, const std::string& organ,
                    const ForestHyper& hyper, const FeatureGeometryConfig& geometry_config) {
  if (cases.size() < 2) {
    throw data_error("forest training needs at least 2 cases, got " +
                     std::to_string(cases.size()));
  }
  Forest forest;
  forest.organ = organ;
  forest.hyper = hyper;
  forest.geometry = build_feature_geometry(geometry_config);

  const SampleSet set = collect_samples(cases, forest.geometry, hyper);
  const std::int64_t n = set.targets.cols();
  if (n < hyper.min_leaf) {
    throw data_error("forest training has " + std::to_string(n) +
                     " samples, fewer than min_leaf " + std::to_string(hyper.min_leaf));
  }

  const std::int64_t boot =
      std::max<std::int64_t>(hyper.min_leaf,
                             static_cast<std::int64_t>(std::llround(hyper.bootstrap_fraction *
                                                                    static_cast<double>(n))));
  forest.trees.resize(hyper.tree_count);
  for (int t = 0; t < hyper.tree_count; ++t) {
    TreeGrower grower{set, hyper, Rng(mix_seed(hyper.seed, static_cast<std::uint64_t>(t))), {}};
    std::vector<std::int64_t> idx(boot);
    for (std::int64_t i = 0; i < boot; ++i) {
      idx[i] = static_cast<std::int64_t>(grower.rng.uniform_int(static_cast<std::uint64_t>(n)));
    }
    grower.nodes.reserve(2048);
    grower.grow(idx, 0, boot, 0);
    forest.trees[t].nodes = std::move(grower.nodes);
  }
  return forest;
}

BoxPrediction predict_bbox(const Forest& forest, const Grid<float>& volume) {
  const std::vector<Vector3i> candidates =
      sample_candidate_voxels(volume.geom, forest.hyper.cylinder_radius, forest.hyper.stride);

  const std::size_t votes = candidates.size() * forest.trees.size();
  std::array<std::vector<double>, 6> wall_votes;
  for (auto& v : wall_votes) v.reserve(votes);

  for (const Vector3i& v : candidates) {
    const Vector3d p = volume.geom.world(v[0], v[1], v[2]);
    const Eigen::VectorXf features =
        compute_feature_vector(volume, p, forest.geometry, forest.hyper.out_of_field)
            .cast<float>();
    for (const RegressionTree& tree : forest.trees) {
      const Vector6d& offset = tree.predict(features);
      // d(p) = p - wall per component, so wall = p - d(p).
      wall_votes[0].push_back(p[0] - offset[0]);
      wall_votes[1].push_back(p[0] - offset[1]);
      wall_votes[2].push_back(p[1] - offset[2]);
      wall_votes[3].push_back(p[1] - offset[3]);
      wall_votes[4].push_back(p[2] - offset[4]);
      wall_votes[5].push_back(p[2] - offset[5]);
    }
  }

  BoxPrediction pred;
  pred.vote_count = static_cast<std::int64_t>(votes);
  Vector6d walls;
  for (int w = 0; w < 6; ++w) {
    walls[w] = quantile_type7(wall_votes[w], 0.5);
    pred.spread[w] =
        quantile_type7(wall_votes[w], 0.75) - quantile_type7(wall_votes[w], 0.25);
  }
  pred.box = BoundingBoxMM::from_vector(walls);
  pred.axis_ordered = {pred.box.left <= pred.box.right,
                       pred.box.anterior <= pred.box.posterior,
                       pred.box.head <= pred.box.foot};
  return pred;
}

BoxEvaluation evaluate_bbox(const BoundingBoxMM& pred, const BoundingBoxMM& gt) {
  BoxEvaluation e;
  e.wall_abs_errors = (pred.as_vector() - gt.as_vector()).cwiseAbs();

  double inter = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = std::max(pred.min_wall(a), gt.min_wall(a));
    const double hi = std::min(pred.max_wall(a), gt.max_wall(a));
    inter *= std::max(0.0, hi - lo);
  }
  const double uni = pred.volume() + gt.volume() - inter;
  if (uni <= 0.0) {
    // Two degenerate boxes: identical ones agree perfectly.
    e.iou3d = (pred.as_vector() - gt.as_vector()).cwiseAbs().maxCoeff() == 0.0 ? 1.0 : 0.0;
  } else {
    e.iou3d = inter / uni;
  }
  return e;
}

namespace {

void save_node(std::ostream& os, const std::vector<TreeNode>& nodes, int n) {
  const TreeNode& node = nodes[n];
  if (node.is_leaf()) {
    os << "L";
    for (int i = 0; i < 6; ++i) os << " " << fmt_d(node.mean_offset[i]);
    os << " " << node.sample_count << "\n";
    return;
  }
  os << "N " << node.feature << " " << fmt_d(node.threshold) << "\n";
  save_node(os, nodes, node.left);
  save_node(os, nodes, node.right);
}

int load_node(std::istream& is, std::vector<TreeNode>& nodes, const std::string& path) {
  std::string tag;
  if (!(is >> tag)) {
    throw data_error(path + ": truncated tree node list");
  }
  const int self = static_cast<int>(nodes.size());
  nodes.emplace_back();
  if (tag == "L") {
    for (int i = 0; i < 6; ++i) {
      if (!(is >> nodes[self].mean_offset[i])) {
        throw data_error(path + ": bad leaf offset");
      }
    }
    if (!(is >> nodes[self].sample_count)) {
      throw data_error(path + ": bad leaf sample count");
    }
    return self;
  }
  if (tag != "N") {
    throw data_error(path + ": bad node tag \"" + tag + "\"");
  }
  if (!(is >> nodes[self].feature >> nodes[self].threshold)) {
    throw data_error(path + ": bad split node");
  }
  nodes[self].left = load_node(is, nodes, path);
  nodes[self].right = load_node(is, nodes, path);
  return self;
}

}  // namespace

void save_forest(const Forest& forest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open \"" + path + "\" for writing");
  }
  out << kForestMagic << "\n";
  out << "organ: " << forest.organ << "\n";
  const ForestHyper& h = forest.hyper;
  out << "trees: " << h.tree_count << "\n";
  out << "max_depth: " << h.max_depth << "\n";
  out << "min_leaf: " << h.min_leaf << "\n";
  out << "candidate_splits: " << h.candidate_splits << "\n";
  out << "bootstrap_fraction: " << fmt_d(h.bootstrap_fraction) << "\n";
  out << "stride: " << h.stride << "\n";
  out << "cylinder_radius: " << fmt_d(h.cylinder_radius) << "\n";
  out << "out_of_field: " << fmt_d(h.out_of_field) << "\n";
  out << "seed: " << h.seed << "\n";
  const FeatureGeometryConfig& g = forest.geometry.config;
  out << "sphere_radii: " << fmt_d(g.sphere_radii[0]) << " " << fmt_d(g.sphere_radii[1]) << " "
      << fmt_d(g.sphere_radii[2]) << "\n";
  out << "boxes_per_sphere: " << g.boxes_per_sphere[0] << " " << g.boxes_per_sphere[1] << " "
      << g.boxes_per_sphere[2] << "\n";
  out << "box_edge: " << fmt_d(g.box_edge) << "\n";
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    out << "tree " << t << " nodes " << forest.trees[t].nodes.size() << "\n";
    save_node(out, forest.trees[t].nodes, 0);
  }
  if (!out) {
    throw std::runtime_error("write failed for \"" + path + "\"");
  }
}

Forest load_forest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("cannot open forest file \"" + path + "\"");
  }
  std::string line;
  if (!std::getline(in, line) || line != kForestMagic) {
    throw data_error(path + ": expected \"" + std::string(kForestMagic) + "\"");
  }

  Forest forest;
  ForestHyper h;
  FeatureGeometryConfig g;
  auto expect_key = [&](const std::string& key) -> std::istringstream {
    if (!std::getline(in, line) || line.rfind(key + ":", 0) != 0) {
      throw data_error(path + ": expected \"" + key + ": ...\"");
    }
    return std::istringstream(line.substr(key.size() + 1));
  };
  {
    auto is = expect_key("organ");
    is >> forest.organ;
  }
  expect_key("trees") >> h.tree_count;
  expect_key("max_depth") >> h.max_depth;
  expect_key("min_leaf") >> h.min_leaf;
  expect_key("candidate_splits") >> h.candidate_splits;
  expect_key("bootstrap_fraction") >> h.bootstrap_fraction;
  expect_key("stride") >> h.stride;
  expect_key("cylinder_radius") >> h.cylinder_radius;
  expect_key("out_of_field") >> h.out_of_field;
  expect_key("seed") >> h.seed;
  {
    auto is = expect_key("sphere_radii");
    is >> g.sphere_radii[0] >> g.sphere_radii[1] >> g.sphere_radii[2];
  }
  {
    auto is = expect_key("boxes_per_sphere");
    is >> g.boxes_per_sphere[0] >> g.boxes_per_sphere[1] >> g.boxes_per_sphere[2];
  }
  expect_key("box_edge") >> g.box_edge;

  forest.hyper = h;
  forest.geometry = build_feature_geometry(g);
  forest.trees.reserve(h.tree_count);
  for (int t = 0; t < h.tree_count; ++t) {
    std::string tag;
    int index = 0;
    std::string nodes_kw;
    std::size_t count = 0;
    if (!(in >> tag >> index >> nodes_kw >> count) || tag != "tree" || nodes_kw != "nodes") {
      throw data_error(path + ": expected \"tree <i> nodes <n>\" for tree " + std::to_string(t));
    }
    RegressionTree tree;
    tree.nodes.reserve(count);
    load_node(in, tree.nodes, path);
    if (tree.nodes.size() != count) {
      throw data_error(path + ": tree " + std::to_string(t) + " declares " +
                       std::to_string(count) + " nodes, parsed " +
                       std::to_string(tree.nodes.size()));
    }
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

}  // namespace voxelbench
