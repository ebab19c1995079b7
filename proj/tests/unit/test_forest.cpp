#include <doctest.h>

#include <cmath>

#include "support/helpers.hpp"
#include "voxelbench/forest.hpp"
#include "voxelbench/phantom.hpp"

using namespace voxelbench;

TEST_CASE("feature geometry: 50 boxes on spheres of 50/25/12.5 mm") {
  const FeatureGeometry g = build_feature_geometry();
  CHECK(g.box_count() == 50);
  CHECK(g.config.sphere_radii == Vector3d(50.0, 25.0, 12.5));

  // Directions are unit-norm within 1e-9 after radius scaling.
  int col = 0;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < g.config.boxes_per_sphere[s]; ++i, ++col) {
      CHECK(g.displacements.col(col).norm() ==
            doctest::Approx(g.config.sphere_radii[s]).epsilon(1e-9));
    }
  }
}

TEST_CASE("feature geometry: deterministic and validated") {
  const FeatureGeometry a = build_feature_geometry();
  const FeatureGeometry b = build_feature_geometry();
  CHECK(a.displacements == b.displacements);

  FeatureGeometryConfig bad;
  bad.sphere_radii[1] = 0.0;
  CHECK_THROWS_AS(build_feature_geometry(bad), data_error);
  bad = FeatureGeometryConfig{};
  bad.box_edge = -1.0;
  CHECK_THROWS_AS(build_feature_geometry(bad), data_error);
}

TEST_CASE("candidate voxels: huge radius selects everything") {
  GridGeometry geom;
  geom.dims = {4, 5, 3};
  geom.spacing = {2, 2, 2};
  const auto all = sample_candidate_voxels(geom, 1e6, 1);
  CHECK(static_cast<std::int64_t>(all.size()) == geom.voxel_count());
}

TEST_CASE("candidate voxels: axis voxels sit at distance zero") {
  GridGeometry geom;
  geom.dims = {1, 1, 7};
  geom.spacing = {2, 2, 2};
  const auto picks = sample_candidate_voxels(geom, 0.0, 1);
  CHECK(picks.size() == 7);
}

TEST_CASE("candidate voxels: matches a brute-force cylinder scan") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    GridGeometry geom;
    geom.dims = {1 + static_cast<int>(rng.uniform_int(16)),
                 1 + static_cast<int>(rng.uniform_int(16)),
                 1 + static_cast<int>(rng.uniform_int(16))};
    geom.spacing = Vector3d::Constant(2.0);
    const double radius = rng.uniform(1.0, 40.0);
    const int stride = 1 + static_cast<int>(rng.uniform_int(3));

    std::size_t expected = 0;
    const double cx = (geom.dims[0] - 1) * geom.spacing[0] / 2.0;
    const double cy = (geom.dims[1] - 1) * geom.spacing[1] / 2.0;
    for (int k = 0; k < geom.dims[2]; k += stride)
      for (int j = 0; j < geom.dims[1]; j += stride)
        for (int i = 0; i < geom.dims[0]; i += stride) {
          const double dx = i * geom.spacing[0] - cx;
          const double dy = j * geom.spacing[1] - cy;
          if (std::sqrt(dx * dx + dy * dy) <= radius) ++expected;
        }
    if (expected == 0) {
      CHECK_THROWS_AS(sample_candidate_voxels(geom, radius, stride), data_error);
    } else {
      CHECK(sample_candidate_voxels(geom, radius, stride).size() == expected);
    }
  }
}

TEST_CASE("feature vector: constant volume with all boxes inside") {
  GridGeometry geom;
  geom.dims = {120, 120, 120};
  geom.spacing = {2, 2, 2};
  Grid<float> g(geom);
  g.voxels.setConstant(77.0f);
  const FeatureGeometry fg = build_feature_geometry();
  const Vector3d center(119, 119, 119);
  const Eigen::VectorXd f = compute_feature_vector(g, center, fg);
  for (int i = 0; i < f.size(); ++i) CHECK(f[i] == doctest::Approx(77.0));
}

TEST_CASE("feature vector: boxes outside the field yield the declared constant") {
  GridGeometry geom;
  geom.dims = {4, 4, 4};
  geom.spacing = {2, 2, 2};
  Grid<float> g(geom);
  g.voxels.setConstant(10.0f);
  const FeatureGeometry fg = build_feature_geometry();
  // Query far outside: every probe box lands outside the tiny volume.
  const Eigen::VectorXd f = compute_feature_vector(g, Vector3d(500, 500, 500), fg);
  for (int i = 0; i < f.size(); ++i) CHECK(f[i] == -1024.0);
}

TEST_CASE("feature vector: single-box mean matches brute-force enumeration") {
  Rng rng(32);
  GridGeometry geom;
  geom.dims = {16, 16, 16};
  geom.spacing = {2, 2, 2};
  Grid<float> g(geom);
  for (std::int64_t i = 0; i < g.voxels.size(); ++i) {
    g.voxels[i] = static_cast<float>(rng.uniform(-200, 200));
  }
  FeatureGeometryConfig cfg;
  cfg.sphere_radii = {7.3, 4.1, 2.2};
  cfg.boxes_per_sphere = {4, 3, 3};
  cfg.box_edge = 6.0;
  const FeatureGeometry fg = build_feature_geometry(cfg);

  for (int trial = 0; trial < 20; ++trial) {
    const Vector3d p(rng.uniform(6, 24), rng.uniform(6, 24), rng.uniform(6, 24));
    const Eigen::VectorXd f = compute_feature_vector(g, p, fg);
    for (int b = 0; b < fg.box_count(); ++b) {
      const Vector3d c = p + fg.displacements.col(b);
      double sum = 0.0;
      int count = 0;
      for (int k = 0; k < 16; ++k)
        for (int j = 0; j < 16; ++j)
          for (int i = 0; i < 16; ++i) {
            const Vector3d w = geom.world(i, j, k);
            if (std::abs(w[0] - c[0]) <= 3.0 && std::abs(w[1] - c[1]) <= 3.0 &&
                std::abs(w[2] - c[2]) <= 3.0) {
              sum += g.at(i, j, k);
              ++count;
            }
          }
      const double expected = count > 0 ? sum / count : -1024.0;
      CHECK(f[b] == doctest::Approx(expected).epsilon(1e-6));
    }
  }
}

TEST_CASE("offset vector: direct substitution and corner cancellation") {
  const BoundingBoxMM box{0, 40, 0, 60, 20, 80};
  const Vector6d d = compute_offset(Vector3d(10, 20, 30), box);
  CHECK(d == (Vector6d() << 10, -30, 20, -40, 10, -50).finished());

  const Vector6d corner = compute_offset(Vector3d(box.left, box.anterior, box.head), box);
  CHECK(corner[0] == 0.0);
  CHECK(corner[2] == 0.0);
  CHECK(corner[4] == 0.0);
}

TEST_CASE("offset vector: walls = p - d(p) inverts exactly") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector3d p(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100));
    BoundingBoxMM box;
    box.left = rng.uniform(-50, 0);
    box.right = box.left + rng.uniform(1, 80);
    box.anterior = rng.uniform(-50, 0);
    box.posterior = box.anterior + rng.uniform(1, 80);
    box.head = rng.uniform(-50, 0);
    box.foot = box.head + rng.uniform(1, 80);
    const Vector6d d = compute_offset(p, box);
    const Vector6d walls =
        (Vector6d() << p[0] - d[0], p[0] - d[1], p[1] - d[2], p[1] - d[3], p[2] - d[4],
         p[2] - d[5])
            .finished();
    CHECK((walls - box.as_vector()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("train_forest: constant features and identical targets fit exactly") {
  // Single-voxel volumes: every sample shares p = (0,0,0) and the same box,
  // so the offset target is constant and the lone leaf must reproduce it.
  GridGeometry geom;
  geom.dims = {1, 1, 1};
  geom.spacing = {2, 2, 2};
  std::vector<Grid<float>> volumes(20, Grid<float>(geom));
  const BoundingBoxMM box{-4, 6, -2, 8, -10, 12};
  std::vector<TrainingCase> cases;
  for (auto& v : volumes) {
    v.voxels.setConstant(100.0f);
    cases.push_back({&v, box});
  }
  ForestHyper hyper;
  hyper.min_leaf = 1;
  hyper.tree_count = 3;
  const Forest forest = train_forest(cases, "liver", hyper);
  const Vector6d expected = compute_offset(Vector3d(0, 0, 0), box);
  for (const auto& tree : forest.trees) {
    REQUIRE(tree.nodes.size() == 1);
    CHECK((tree.nodes[0].mean_offset - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("train_forest: error when samples cannot reach min_leaf") {
  GridGeometry geom;
  geom.dims = {1, 1, 1};
  std::vector<Grid<float>> volumes(2, Grid<float>(geom));
  std::vector<TrainingCase> cases;
  for (auto& v : volumes) cases.push_back({&v, BoundingBoxMM{0, 1, 0, 1, 0, 1}});
  ForestHyper hyper;  // min_leaf 16 > 2 samples
  CHECK_THROWS_AS(train_forest(cases, "liver", hyper), data_error);
  CHECK_THROWS_AS(train_forest({cases[0]}, "liver", hyper), data_error);
}

TEST_CASE("train_forest: same seed gives byte-identical forest files") {
  vbtest::TempDir tmp("forest_determinism");
  const PhantomSpec spec = default_phantom_spec();
  std::vector<PhantomCase> phantoms;
  std::vector<TrainingCase> cases;
  for (int i = 0; i < 4; ++i) {
    phantoms.push_back(generate_case(spec, 100 + i, "p" + std::to_string(i)));
  }
  std::vector<Grid<float>> volumes;
  for (auto& p : phantoms) volumes.push_back(to_float(p.volume));
  for (std::size_t i = 0; i < phantoms.size(); ++i) {
    cases.push_back({&volumes[i], phantoms[i].gt_boxes.at("liver")});
  }
  ForestHyper hyper;
  hyper.tree_count = 2;
  hyper.max_depth = 6;
  hyper.stride = 4;
  hyper.seed = 9;
  save_forest(train_forest(cases, "liver", hyper), tmp.file("a.rrf"));
  save_forest(train_forest(cases, "liver", hyper), tmp.file("b.rrf"));
  CHECK(vbtest::slurp(tmp.file("a.rrf")) == vbtest::slurp(tmp.file("b.rrf")));

  const Forest loaded = load_forest(tmp.file("a.rrf"));
  save_forest(loaded, tmp.file("c.rrf"));
  CHECK(vbtest::slurp(tmp.file("a.rrf")) == vbtest::slurp(tmp.file("c.rrf")));
}

TEST_CASE("predict_bbox: depth-0 trees vote p minus stored offset") {
  Forest forest;
  forest.organ = "spleen";
  forest.geometry = build_feature_geometry();
  forest.hyper.stride = 1;
  forest.hyper.cylinder_radius = 10.0;
  TreeNode leaf;
  leaf.mean_offset << 3, -5, 2, -7, 1, -9;
  leaf.sample_count = 1;
  RegressionTree tree;
  tree.nodes = {leaf};
  forest.trees = {tree, tree};

  GridGeometry geom;
  geom.dims = {1, 1, 1};
  geom.spacing = {2, 2, 2};
  Grid<float> vol(geom);
  const BoxPrediction pred = predict_bbox(forest, vol);
  CHECK(pred.vote_count == 2);
  CHECK(pred.box.as_vector() == (Vector6d() << -3, 5, -2, 7, -1, 9).finished());
  CHECK(pred.ordered());
}

TEST_CASE("predict_bbox: symmetric votes land on the center wall") {
  Forest forest;
  forest.organ = "spleen";
  forest.geometry = build_feature_geometry();
  forest.hyper.stride = 1;
  forest.hyper.cylinder_radius = 10.0;
  TreeNode lo, hi;
  lo.mean_offset << -1, -11, -1, -11, -1, -11;
  hi.mean_offset << 1, -9, 1, -9, 1, -9;
  RegressionTree t_lo, t_hi;
  t_lo.nodes = {lo};
  t_hi.nodes = {hi};
  forest.trees = {t_lo, t_hi};

  GridGeometry geom;
  geom.dims = {1, 1, 1};
  Grid<float> vol(geom);
  const BoxPrediction pred = predict_bbox(forest, vol);
  CHECK(pred.box.left == doctest::Approx(0.0));
  CHECK(pred.box.right == doctest::Approx(10.0));
  CHECK(pred.spread[0] == doctest::Approx(1.0));  // IQR of {-1, 1}
}

TEST_CASE("evaluate_bbox: identity, disjoint, and the shifted-cube case") {
  const BoundingBoxMM cube{0, 1, 0, 1, 0, 1};
  const BoxEvaluation same = evaluate_bbox(cube, cube);
  CHECK(same.wall_abs_errors.maxCoeff() == 0.0);
  CHECK(same.iou3d == 1.0);

  const BoxEvaluation far = evaluate_bbox(cube, BoundingBoxMM{5, 6, 5, 6, 5, 6});
  CHECK(far.iou3d == 0.0);

  const BoxEvaluation shifted = evaluate_bbox(cube, BoundingBoxMM{0.5, 1.5, 0, 1, 0, 1});
  CHECK(shifted.iou3d == doctest::Approx(1.0 / 3.0));
  CHECK(shifted.wall_abs_errors[0] == doctest::Approx(0.5));
}

TEST_CASE("feature vector invariant under joint translation") {
  Rng rng(34);
  GridGeometry geom;
  geom.dims = {20, 20, 20};
  geom.spacing = {2, 2, 2};
  Grid<float> g(geom);
  for (std::int64_t i = 0; i < g.voxels.size(); ++i) {
    g.voxels[i] = static_cast<float>(rng.uniform(-100, 100));
  }
  Grid<float> shifted = g;
  const Vector3d t(64.0, -32.0, 128.0);
  shifted.geom.origin = g.geom.origin + t;

  const FeatureGeometry fg = build_feature_geometry(
      FeatureGeometryConfig{{9.0, 5.0, 3.0}, {4, 3, 3}, 6.0});
  for (int trial = 0; trial < 10; ++trial) {
    const Vector3d p(rng.uniform(10, 28), rng.uniform(10, 28), rng.uniform(10, 28));
    const Eigen::VectorXd a = compute_feature_vector(g, p, fg);
    const Eigen::VectorXd b = compute_feature_vector(shifted, p + t, fg);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("forest localization smoke test on easy phantoms") {
  PhantomSpec spec = default_phantom_spec();
  std::vector<PhantomCase> phantoms;
  std::vector<Grid<float>> volumes;
  for (int i = 0; i < 10; ++i) {
    phantoms.push_back(generate_case(spec, 500 + i, "p" + std::to_string(i)));
    volumes.push_back(to_float(phantoms.back().volume));
  }
  std::vector<TrainingCase> cases;
  for (std::size_t i = 0; i < 8; ++i) {
    cases.push_back({&volumes[i], phantoms[i].gt_boxes.at("liver")});
  }
  ForestHyper hyper;
  hyper.stride = 3;
  hyper.tree_count = 4;
  hyper.seed = 77;
  const Forest forest = train_forest(cases, "liver", hyper);

  for (std::size_t i = 8; i < 10; ++i) {
    const BoxPrediction pred = predict_bbox(forest, volumes[i]);
    REQUIRE(pred.ordered());
    const BoxEvaluation ev = evaluate_bbox(pred.box, phantoms[i].gt_boxes.at("liver"));
    CHECK(ev.iou3d >= 0.3);
    CHECK(ev.wall_abs_errors.maxCoeff() <= 16.0);
  }
}
