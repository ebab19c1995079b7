// Acceptance suite: one test case per release criterion, each printing a
// PASS/FAIL line with the measured numbers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <set>

#include "support/gradcheck.hpp"
#include "support/helpers.hpp"
#include "support/stat_oracles.hpp"
#include "voxelbench/phantom.hpp"
#include "voxelbench/pipeline.hpp"

using namespace voxelbench;

namespace {

void report_line(const char* name, bool ok, const std::string& detail = {}) {
  std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", name, detail.empty() ? "" : " -- ",
              detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

TEST_CASE("criterion: format round-trip is bit-exact for all element types") {
  vbtest::TempDir tmp("acc_io");
  Rng rng(1001);
  GridGeometry geom;
  geom.dims = {5, 3, 4};
  geom.spacing = {2.0, 1.5, 0.625};
  geom.origin = {-7.25, 0.0, 11.5};
  geom.orientation = "PIR";

  bool ok = true;
  {
    Grid<std::int16_t> g(geom);
    for (std::int64_t i = 0; i < g.voxels.size(); ++i) {
      g.voxels[i] = static_cast<std::int16_t>(rng.uniform(-32768, 32767));
    }
    g.voxels[0] = -32768;
    g.voxels[1] = -1;
    write_volume(g, tmp.file("a.vbr"));
    const auto back = std::get<Grid<std::int16_t>>(read_volume(tmp.file("a.vbr")));
    ok &= back.geom.congruent(geom, 0.0) && (back.voxels == g.voxels).all();
  }
  {
    Grid<std::uint8_t> g(geom);
    for (std::int64_t i = 0; i < g.voxels.size(); ++i) {
      g.voxels[i] = static_cast<std::uint8_t>(rng.uniform_int(256));
    }
    write_volume(g, tmp.file("b.vbr"));
    const auto back = std::get<Grid<std::uint8_t>>(read_volume(tmp.file("b.vbr")));
    ok &= (back.voxels == g.voxels).all();
  }
  {
    Grid<float> g(geom);
    for (std::int64_t i = 0; i < g.voxels.size(); ++i) {
      g.voxels[i] = static_cast<float>(rng.normal(0, 50));
    }
    write_volume(g, tmp.file("c.vbr"));
    const auto back = std::get<Grid<float>>(read_volume(tmp.file("c.vbr")));
    for (std::int64_t i = 0; i < g.voxels.size(); ++i) {
      ok &= std::bit_cast<std::uint32_t>(back.voxels[i]) ==
            std::bit_cast<std::uint32_t>(g.voxels[i]);
    }
  }
  report_line("format round-trip bit-exact (int16 incl. negatives, uint8, float32)", ok);
  CHECK(ok);
}

TEST_CASE("criterion: bounding-box extraction matches the exhaustive scan") {
  Rng rng(1002);
  bool ok = true;
  for (int trial = 0; trial < 500; ++trial) {
    GridGeometry geom;
    geom.dims = {1 + static_cast<int>(rng.uniform_int(8)),
                 1 + static_cast<int>(rng.uniform_int(8)),
                 1 + static_cast<int>(rng.uniform_int(8))};
    geom.spacing = {rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 3)};
    geom.origin = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    LabelMask labels(geom);
    for (std::int64_t i = 0; i < labels.voxels.size(); ++i) {
      labels.voxels[i] = rng.uniform() < 0.3 ? 1 : 0;
    }
    if ((labels.voxels == 1).count() == 0) {
      labels.voxels[static_cast<std::int64_t>(rng.uniform_int(labels.voxels.size()))] = 1;
    }

    // Exhaustive voxel scan.
    Vector6d want;
    bool found = false;
    for (int k = 0; k < geom.dims[2]; ++k)
      for (int j = 0; j < geom.dims[1]; ++j)
        for (int i = 0; i < geom.dims[0]; ++i) {
          if (labels.at(i, j, k) != 1) continue;
          const Vector3d w = geom.world(i, j, k);
          if (!found) {
            want << w[0], w[0], w[1], w[1], w[2], w[2];
            found = true;
          } else {
            want[0] = std::min(want[0], w[0]);
            want[1] = std::max(want[1], w[0]);
            want[2] = std::min(want[2], w[1]);
            want[3] = std::max(want[3], w[1]);
            want[4] = std::min(want[4], w[2]);
            want[5] = std::max(want[5], w[2]);
          }
        }
    ok &= extract_gt_bbox(labels, 1).as_vector() == want;
  }
  report_line("bounding-box extraction exact on 500 random masks <= 8^3", ok);
  CHECK(ok);
}

TEST_CASE("criterion: DSC oracle (1000 random pairs + fixed cases)") {
  Rng rng(1003);
  bool ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(512));
    ArrayX<std::uint8_t> u(n), g(n);
    for (std::int64_t i = 0; i < n; ++i) {
      u[i] = rng.uniform() < 0.35 ? 1 : 0;
      g[i] = rng.uniform() < 0.35 ? 1 : 0;
    }
    ok &= dsc(u, g) == vbtest::dsc_oracle(u, g);
  }
  ArrayX<std::uint8_t> u(8), g(8);
  u.setConstant(1);
  g.setConstant(1);
  ok &= dsc(u, g) == 1.0;
  u.setZero();
  g.setZero();
  u[0] = 1;
  g[1] = 1;
  ok &= dsc(u, g) == 0.0;
  u.setZero();
  g.setZero();
  u[0] = u[1] = 1;
  g[1] = g[2] = g[3] = 1;
  ok &= dsc(u, g) == 0.4;
  report_line("DSC equals brute-force set counting (1000 pairs) and the fixed cases", ok);
  CHECK(ok);
}

TEST_CASE("criterion: statistics oracles (Wilcoxon enumeration, t quadrature, marks)") {
  Rng rng(1004);
  bool wilcoxon_ok = true;
  for (int n = 2; n <= 12; ++n) {
    for (int rep = 0; rep < 8; ++rep) {
      std::vector<double> a(n), b(n, 0.0);
      std::set<double> seen;
      for (int i = 0; i < n; ++i) {
        double d;
        do {
          d = rng.uniform(-1, 1);
        } while (d == 0.0 || seen.count(std::fabs(d)));
        seen.insert(std::fabs(d));
        a[i] = d;
      }
      const WilcoxonResult r = wilcoxon_signed_rank(a, b);
      wilcoxon_ok &= r.exact;
      wilcoxon_ok &= std::fabs(r.p - vbtest::wilcoxon_p_enumeration(a)) <= 1e-12;
    }
  }
  report_line("Wilcoxon exact p equals 2^n enumeration for n <= 12 (tol 1e-12)", wilcoxon_ok);
  CHECK(wilcoxon_ok);

  bool t_ok = true;
  const std::vector<std::vector<double>> fixtures = {
      {0.01, 0.02, 0.03, 0.02, 0.02},
      {0.5, -0.2, 0.1, 0.4, -0.3, 0.2, 0.05},
      {1.2, 0.8, 1.5, 0.9},
      {-0.1, -0.25, -0.05, -0.3, -0.15, -0.2, -0.1, -0.4, -0.05, -0.35},
  };
  for (const auto& d : fixtures) {
    std::vector<double> a(d.size(), 0.0), b(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) b[i] = -d[i];
    const TTestResult r = paired_t_test(a, b);
    t_ok &= std::fabs(r.p - vbtest::t_p_quadrature(r.t, r.df)) <= 1e-6;
  }
  report_line("paired t-test p matches the textbook quadrature within 1e-6", t_ok);
  CHECK(t_ok);

  const bool marks_ok = significance_mark(0.10) == SignificanceMark::none &&
                        significance_mark(0.0999999) == SignificanceMark::plus &&
                        significance_mark(0.05) == SignificanceMark::plus &&
                        significance_mark(0.0499999) == SignificanceMark::one_star &&
                        significance_mark(0.01) == SignificanceMark::one_star &&
                        significance_mark(0.0099999) == SignificanceMark::two_star &&
                        significance_mark(0.001) == SignificanceMark::two_star &&
                        significance_mark(0.0009999) == SignificanceMark::three_star;
  report_line("significance marks honor strict +/*/**/*** thresholds at the boundaries",
              marks_ok);
  CHECK(marks_ok);
}

TEST_CASE("criterion: improvement formula reproduces the reference percentages") {
  const double mem_train = improvement_percent(1693, 10957);
  const double mem_app = improvement_percent(1693, 9117);
  const double time_mean = improvement_percent(567, 607);
  const bool ok = std::fabs(mem_train - 647.19) <= 0.01 && std::fabs(mem_app - 538.51) <= 0.01 &&
                  std::fabs(time_mean - 107.06) <= 0.01 && std::fabs(time_mean - 107.13) <= 0.2;
  report_line("improvement percentages 647.19 / 538.51 (+-0.01) and 107.06 (+-0.2 of 107.13)",
              ok,
              fmt("%.4f", mem_train) + " / " + fmt("%.4f", mem_app) + " / " +
                  fmt("%.4f", time_mean));
  CHECK(ok);
}

TEST_CASE("criterion: gradient suite at 64-bit") {
  Rng rng(1005);

  bool conv_ok = true;
  for (int rank : {2, 3}) {
    std::vector<std::int64_t> xshape{2, 2};
    for (int i = 0; i < rank; ++i) xshape.push_back(rank == 2 ? 7 : 5);
    std::vector<std::int64_t> kshape{3, 2};
    for (int i = 0; i < rank; ++i) kshape.push_back(3);
    Tensor<double> x(xshape), kernel(kshape), bias({3});
    vbtest::fill_normal(x, rng);
    vbtest::fill_normal(kernel, rng, 0.3);
    vbtest::fill_normal(bias, rng, 0.1);
    std::vector<std::int64_t> oshape = xshape;
    oshape[1] = 3;
    const Tensor<double> w = vbtest::random_seed_like(oshape, rng);
    const auto eval = [&]() { return vbtest::dot_loss(conv_forward(x, kernel, bias, rank), w); };
    const ConvGrads<double> g = conv_backward(x, kernel, w, rank);
    conv_ok &= vbtest::max_grad_rel_error(x, g.input, eval, 100, rng) <= 1e-5;
    conv_ok &= vbtest::max_grad_rel_error(kernel, g.kernel, eval, 100, rng) <= 1e-5;
    conv_ok &= vbtest::max_grad_rel_error(bias, g.bias, eval, 6, rng) <= 1e-5;
  }
  report_line("conv forward/backward vs finite differences <= 1e-5 (100+ coords per rank)",
              conv_ok);
  CHECK(conv_ok);

  bool pool_ok = true;
  for (int rank : {2, 3}) {
    std::vector<std::int64_t> shape{2, 2};
    for (int i = 0; i < rank; ++i) shape.push_back(6);
    Tensor<double> x(shape);
    vbtest::fill_normal(x, rng);  // continuous draws: ties have measure zero
    const PoolResult<double> fwd = maxpool_forward(x, rank);
    const Tensor<double> w = vbtest::random_seed_like(fwd.output.shape(), rng);
    const auto eval = [&]() { return vbtest::dot_loss(maxpool_forward(x, rank).output, w); };
    const Tensor<double> din = maxpool_backward(w, fwd.argmax, x.shape(), rank);
    pool_ok &= vbtest::max_grad_rel_error(x, din, eval, 100, rng) <= 1e-5;
  }
  report_line("maxpool backward vs finite differences <= 1e-5 away from ties", pool_ok);
  CHECK(pool_ok);

  bool up_ok = true;
  for (int rank : {2, 3}) {
    std::vector<std::int64_t> xshape{2, 3};
    for (int i = 0; i < rank; ++i) xshape.push_back(4);
    std::vector<std::int64_t> kshape{2, 3};
    for (int i = 0; i < rank; ++i) kshape.push_back(2);
    Tensor<double> x(xshape), kernel(kshape);
    vbtest::fill_normal(x, rng);
    vbtest::fill_normal(kernel, rng, 0.4);
    std::vector<std::int64_t> oshape = xshape;
    oshape[1] = 2;
    for (int i = 0; i < rank; ++i) oshape[2 + i] *= 2;
    const Tensor<double> w = vbtest::random_seed_like(oshape, rng);
    const auto eval = [&]() { return vbtest::dot_loss(upconv_forward(x, kernel, rank), w); };
    const UpconvGrads<double> g = upconv_backward(x, kernel, w, rank);
    up_ok &= vbtest::max_grad_rel_error(x, g.input, eval, 100, rng) <= 1e-5;
    up_ok &= vbtest::max_grad_rel_error(kernel, g.kernel, eval, 100, rng) <= 1e-5;
  }
  report_line("upconv forward/backward vs finite differences <= 1e-5", up_ok);
  CHECK(up_ok);

  bool bce_ok = true;
  {
    Tensor<double> z({2, 1, 6, 6}), t({2, 1, 6, 6});
    vbtest::fill_normal(z, rng, 2.0);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_int(2);
    const Tensor<double> p = sigmoid_forward(z);
    const LossResult<double> loss = bce_loss(p, t);
    const Tensor<double> dz = sigmoid_backward(loss.dprob, p);
    const auto eval = [&]() { return bce_loss(sigmoid_forward(z), t).loss; };
    bce_ok &= vbtest::max_grad_rel_error(z, dz, eval, 100, rng) <= 1e-5;
  }
  report_line("sigmoid+BCE gradient vs finite differences <= 1e-5", bce_ok);
  CHECK(bce_ok);

  // End-to-end on the depth-2, extent-16 toy network, both ranks.
  bool e2e_ok = true;
  for (int rank : {2, 3}) {
    UNetConfig c;
    c.rank = rank;
    c.depth = 2;
    c.base_channels = 2;
    c.input_extent = 16;
    UNetModel<double> model = init_unet<double>(c, 11);
    std::vector<std::int64_t> shape{1, 1};
    for (int i = 0; i < rank; ++i) shape.push_back(16);
    Tensor<double> x(shape);
    vbtest::fill_normal(x, rng);
    Tensor<double> target(shape);
    for (std::int64_t i = 0; i < target.size(); ++i) target[i] = rng.uniform_int(2);

    UNetCache<double> cache;
    const Tensor<double> prob = unet_forward(model, x, &cache);
    const LossResult<double> loss = bce_loss(prob, target);
    Tensor<double> dinput;
    const std::vector<Tensor<double>> grads = unet_backward(model, cache, loss.dprob, &dinput);

    const auto eval = [&]() {
      UNetCache<double> cc;
      const Tensor<double> pr = unet_forward(model, x, &cc);
      std::uint64_t h = 0xcbf29ce484222325ull;
      const auto mix_signs = [&h](const Tensor<double>& t) {
        for (std::int64_t i = 0; i < t.size(); ++i) {
          h ^= t[i] > 0.0 ? 0x9eull : 0x31ull;
          h *= 0x100000001b3ull;
        }
      };
      for (const auto& t : cc.enc_r1) mix_signs(t);
      for (const auto& t : cc.enc_r2) mix_signs(t);
      mix_signs(cc.bott_r1);
      mix_signs(cc.bott_r2);
      for (const auto& t : cc.dec_r1) mix_signs(t);
      for (const auto& t : cc.dec_r2) mix_signs(t);
      for (const auto& arg : cc.pool_arg) {
        for (std::int64_t i = 0; i < arg.size(); ++i) {
          h ^= static_cast<std::uint64_t>(arg[i]);
          h *= 0x100000001b3ull;
        }
      }
      return std::make_pair(bce_loss(pr, target).loss, h);
    };

    // >= 100 coordinates spread over every weight tensor plus the input.
    for (std::size_t wi = 0; wi < model.weights.size(); ++wi) {
      const int coords = model.weights[wi].size() > 8 ? 4 : 1;
      e2e_ok &=
          vbtest::max_grad_rel_error_masked(model.weights[wi], grads[wi], eval, coords, rng) <=
          1e-4;
    }
    e2e_ok &= vbtest::max_grad_rel_error_masked(x, dinput, eval, 20, rng) <= 1e-4;
  }
  report_line("end-to-end gradients <= 1e-4 on the depth-2 extent-16 network", e2e_ok);
  CHECK(e2e_ok);
}

TEST_CASE("criterion: offset identity d(p) inversion exact to 1e-9") {
  Rng rng(1006);
  bool ok = true;
  for (int trial = 0; trial < 500; ++trial) {
    const Vector3d p(rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(-200, 200));
    BoundingBoxMM box;
    box.left = rng.uniform(-100, 50);
    box.right = box.left + rng.uniform(0.1, 150);
    box.anterior = rng.uniform(-100, 50);
    box.posterior = box.anterior + rng.uniform(0.1, 150);
    box.head = rng.uniform(-100, 50);
    box.foot = box.head + rng.uniform(0.1, 150);
    const Vector6d d = compute_offset(p, box);
    const Vector6d walls = (Vector6d() << p[0] - d[0], p[0] - d[1], p[1] - d[2], p[1] - d[3],
                            p[2] - d[4], p[2] - d[5])
                               .finished();
    ok &= (walls - box.as_vector()).cwiseAbs().maxCoeff() <= 1e-9;
  }
  report_line("offset identity: walls = p - d(p) to 1e-9 on random inputs", ok);
  CHECK(ok);
}

TEST_CASE("criterion: RRF localization on held-out easy phantoms") {
  const PhantomSpec spec = default_phantom_spec();
  std::vector<PhantomCase> phantoms;
  std::vector<Grid<float>> volumes;
  for (int i = 0; i < 40; ++i) {
    phantoms.push_back(generate_case(spec, 9000 + i, "r" + std::to_string(i)));
    volumes.push_back(to_float(phantoms.back().volume));
  }

  std::vector<double> wall_errors;
  std::vector<double> ious;
  for (const auto& organ : spec.organs) {
    std::vector<TrainingCase> cases;
    for (int i = 0; i < 32; ++i) {
      cases.push_back({&volumes[i], phantoms[i].gt_boxes.at(organ.name)});
    }
    ForestHyper hyper;  // declared defaults: 8 trees, depth 12, min_leaf 16
    hyper.seed = 4242;
    const Forest forest = train_forest(cases, organ.name, hyper);
    for (int i = 32; i < 40; ++i) {
      const BoxPrediction pred = predict_bbox(forest, volumes[i]);
      const BoxEvaluation ev = evaluate_bbox(pred.box, phantoms[i].gt_boxes.at(organ.name));
      for (int w = 0; w < 6; ++w) wall_errors.push_back(ev.wall_abs_errors[w]);
      ious.push_back(ev.iou3d);
    }
  }
  const double median_err = quantile_type7(wall_errors, 0.5);
  const double mean_iou =
      std::accumulate(ious.begin(), ious.end(), 0.0) / static_cast<double>(ious.size());
  const bool ok = median_err <= 4.0 && mean_iou >= 0.6;
  report_line("RRF held-out: median wall error <= 4 mm and mean IoU >= 0.6", ok,
              "median " + fmt("%.3f", median_err) + " mm, mean IoU " + fmt("%.3f", mean_iou));
  CHECK(median_err <= 4.0);
  CHECK(mean_iou >= 0.6);
}

TEST_CASE("criterion: resource direction between the ranks") {
  vbtest::TempDir tmp("acc_resources");
  const PhantomSpec spec = default_phantom_spec();
  std::vector<PhantomCase> phantoms;
  std::vector<VoiPatch> patches;
  for (int i = 0; i < 32; ++i) {
    phantoms.push_back(generate_case(spec, 7000 + i, "m" + std::to_string(i)));
    const Grid<float> vol = to_float(phantoms.back().volume);
    patches.push_back(crop_resample_voi(vol, phantoms.back().gt_boxes.at("liver"), 48,
                                        &phantoms.back().labels, 1,
                                        phantoms.back().case_id));
  }

  // Serial measurements on identical fold data; two epochs are enough since
  // the training peak does not depend on the epoch count.
  std::vector<ResourceRecord> records;
  std::map<int, UNetModel<float>> models;
  for (int rank : {2, 3}) {
    UNetConfig uc;
    uc.rank = rank;
    uc.depth = 2;
    uc.base_channels = 8;
    uc.input_extent = 48;
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = 5;
    TrainOutcome<float> outcome;
    records.push_back(measure_resources(Phase::training, "liver", rank, [&]() {
      outcome = train_unet<float>(uc, patches, tc);
    }));
    models.emplace(rank, std::move(outcome.model));
  }
  for (int rank : {2, 3}) {
    records.push_back(measure_resources(Phase::application, "liver", rank, [&]() {
      const VoiPatch prob = predict_voi(models.at(rank), patches[0]);
      threshold_mask(prob, 0.5);
    }));
  }

  const double train_mem2 = records[0].peak_memory_mib;
  const double train_mem3 = records[1].peak_memory_mib;
  const double app_time2 = records[2].wall_time_seconds;
  const double app_time3 = records[3].wall_time_seconds;

  const ModelFootprint f2 = model_footprint({2, 2, 8, 1, 1, 48});
  const ModelFootprint f3 = model_footprint({3, 2, 8, 1, 1, 48});
  const double act_ratio =
      static_cast<double>(f3.activation_elements) / static_cast<double>(f2.activation_elements);

  const bool mem_ok = train_mem3 >= 5.0 * train_mem2;
  const bool act_ok = act_ratio >= 5.0;
  const bool time_ok = app_time3 > app_time2;
  report_line("rank-3 training memory >= 5x rank-2 (measured)", mem_ok,
              fmt("%.1f", train_mem3) + " vs " + fmt("%.1f", train_mem2) + " MiB");
  report_line("rank-3 analytic activation footprint >= 5x rank-2", act_ok,
              fmt("%.1f", act_ratio) + "x");
  report_line("rank-3 per-VOI application slower than rank-2 slice stack", time_ok,
              fmt("%.3f", app_time3) + " vs " + fmt("%.3f", app_time2) + " s");
  CHECK(mem_ok);
  CHECK(act_ok);
  CHECK(time_ok);

  // Table direction: the favorable (cheaper) rank-2 side carries the brackets.
  std::vector<DiceRecord> dice;
  for (int rank : {2, 3}) {
    for (int i = 0; i < 3; ++i) {
      dice.push_back({"m" + std::to_string(i), "liver", rank, 0.9});
    }
  }
  const ComparisonReport rep = render_comparison(dice, paired_tests_by_organ(dice), records);
  const std::string mem2_cell =
      "[" + fmt("%.2f", train_mem2) + "+/-" + fmt("%.2f", 0.0) + "]";
  const std::string mem3_cell =
      "[" + fmt("%.2f", train_mem3) + "+/-" + fmt("%.2f", 0.0) + "]";
  const bool table_ok = rep.perf_table.find(mem2_cell) != std::string::npos &&
                        rep.perf_table.find(mem3_cell) == std::string::npos;
  report_line("report tables bold the cheaper side of each resource column", table_ok);
  CHECK(table_ok);
}

TEST_CASE("criterion: crossval determinism (byte-identical outputs)") {
  vbtest::TempDir tmp("acc_determinism");
  generate_dataset(default_phantom_spec(), 8, 31, tmp.file("data"));

  ExperimentConfig cfg;
  cfg.manifest_path = tmp.file("data") + "/manifest.txt";
  cfg.organs = {"liver"};
  cfg.folds = 2;
  cfg.seed = 17;
  cfg.ranks = {2, 3};
  cfg.unet_depth = 2;
  cfg.unet_base_channels = 4;
  cfg.voi_extent = 16;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.jobs = 2;  // exercise thread-order independence

  cfg.out_dir = tmp.file("run1");
  run_crossval(cfg);
  cfg.out_dir = tmp.file("run2");
  run_crossval(cfg);

  bool ok = true;
  for (const char* name : {"dice.csv", "stats.csv", "tests.csv"}) {
    ok &= vbtest::slurp(tmp.file("run1") + "/" + name) ==
          vbtest::slurp(tmp.file("run2") + "/" + name);
  }
  for (const char* model : {"models/unet_liver_rank2_fold0.vbm",
                            "models/unet_liver_rank3_fold1.vbm"}) {
    ok &= vbtest::slurp(tmp.file("run1") + "/" + model) ==
          vbtest::slurp(tmp.file("run2") + "/" + model);
  }
  report_line("two identical crossval runs produce byte-identical CSVs and models", ok);
  CHECK(ok);
}

TEST_CASE("criterion: desk-scale crossval quality within the time budget") {
  vbtest::TempDir tmp("acc_crossval");
  const auto t0 = std::chrono::steady_clock::now();
  generate_dataset(default_phantom_spec(), 40, 2024, tmp.file("data"));

  ExperimentConfig cfg;
  cfg.manifest_path = tmp.file("data") + "/manifest.txt";
  cfg.out_dir = tmp.file("results");
  cfg.organs = {"liver", "kidney_left"};
  cfg.folds = 5;
  cfg.seed = 11;
  cfg.ranks = {2, 3};
  cfg.unet_depth = 2;
  cfg.unet_base_channels = 8;
  cfg.voi_extent = 48;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.jobs = 2;

  const CrossvalOutcome outcome = run_crossval(cfg);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // 40 records per organ per rank, every case tested exactly once.
  bool counts_ok = true;
  for (const auto& organ : cfg.organs) {
    for (int rank : {2, 3}) {
      std::set<std::string> ids;
      std::int64_t count = 0;
      for (const auto& r : outcome.records) {
        if (r.organ == organ && r.rank == rank) {
          ids.insert(r.case_id);
          ++count;
        }
      }
      counts_ok &= count == 40 && ids.size() == 40;
    }
  }

  double mean2 = 0.0, mean3 = 0.0;
  std::int64_t n2 = 0, n3 = 0;
  for (const auto& r : outcome.records) {
    if (r.rank == 2) {
      mean2 += r.dsc;
      ++n2;
    } else {
      mean3 += r.dsc;
      ++n3;
    }
  }
  mean2 /= static_cast<double>(n2);
  mean3 /= static_cast<double>(n3);

  const bool time_ok = elapsed < 1800.0;
  const bool dsc_ok = mean2 >= 0.85 && mean3 >= 0.85;
  report_line("40-case crossval: 40 records per organ per rank", counts_ok);
  report_line("40-case crossval: mean DSC >= 0.85 for both ranks", dsc_ok,
              "rank2 " + fmt("%.4f", mean2) + ", rank3 " + fmt("%.4f", mean3));
  report_line("40-case crossval completes within 30 minutes", time_ok,
              fmt("%.1f", elapsed) + " s");
  CHECK(counts_ok);
  CHECK(dsc_ok);
  CHECK(time_ok);
}
