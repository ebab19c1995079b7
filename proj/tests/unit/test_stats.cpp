#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support/helpers.hpp"
#include "support/stat_oracles.hpp"
#include "voxelbench/stats.hpp"
#include "voxelbench/tensor.hpp"

using namespace voxelbench;



TEST_CASE("dsc: fixed cases from the overlap formula") {
  ArrayX<std::uint8_t> u(10), g(10);
  u.setZero();
  g.setZero();
  CHECK(dsc(u, g) == 1.0);  // both empty

  u.setConstant(1);
  g.setConstant(1);
  CHECK(dsc(u, g) == 1.0);

  u.setZero();
  g.setZero();
  u[0] = 1;
  g[1] = 1;
  CHECK(dsc(u, g) == 0.0);  // disjoint

  // |U| = 2, |G| = 3, |U n G| = 1 -> 2/5
  u.setZero();
  g.setZero();
  u[0] = u[1] = 1;
  g[1] = g[2] = g[3] = 1;
  CHECK(dsc(u, g) == doctest::Approx(0.4));

  ArrayX<std::uint8_t> short_mask(9);
  CHECK_THROWS_AS(dsc(u, short_mask), data_error);
}

TEST_CASE("dsc: equals brute-force counting and is symmetric on random masks") {
  Rng rng(61);
  for (int trial = 0; trial < 300; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(512));
    ArrayX<std::uint8_t> u(n), g(n);
    for (std::int64_t i = 0; i < n; ++i) {
      u[i] = rng.uniform() < 0.3 ? 1 : 0;
      g[i] = rng.uniform() < 0.3 ? 1 : 0;
    }
    const double got = dsc(u, g);
    CHECK(got == vbtest::dsc_oracle(u, g));
    CHECK(got == dsc(g, u));
  }
}

TEST_CASE("descriptive: interpolated quantiles and degenerate lists") {
  const DescriptiveStats single = descriptive({5.0});
  CHECK(single.mean == 5.0);
  CHECK(single.median == 5.0);
  CHECK(single.n == 1);

  const DescriptiveStats s = descriptive({1.0, 2.0, 3.0, 4.0});
  CHECK(s.median == doctest::Approx(2.5));
  CHECK(s.iqr == doctest::Approx(1.5));
  CHECK(quantile_type7({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile_type7({1, 2, 3, 4}, 0.75) == doctest::Approx(3.25));

  const DescriptiveStats c = descriptive({7.0, 7.0, 7.0});
  CHECK(c.std == 0.0);
  CHECK(c.iqr == 0.0);

  CHECK_THROWS_AS(descriptive({}), data_error);
}

TEST_CASE("paired t-test: symmetric differences give t = 0, p = 1") {
  const TTestResult r = paired_t_test({1, 0, 1, 0}, {0, 1, 0, 1});
  CHECK(r.t == doctest::Approx(0.0));
  CHECK(r.p == doctest::Approx(1.0));
}

TEST_CASE("paired t-test: constant shift is degenerate with p -> 0") {
  const std::vector<double> a{0.5, 0.7, 0.6, 0.8, 0.9};
  std::vector<double> b = a;
  for (double& v : b) v -= 0.1;
  const TTestResult r = paired_t_test(a, b);
  CHECK(r.degenerate);
  CHECK(std::isinf(r.t));
  CHECK(r.p == 0.0);
}

TEST_CASE("paired t-test: matches the quadrature oracle within 1e-6") {
  const std::vector<double> d{0.01, 0.02, 0.03, 0.02, 0.02};
  std::vector<double> a(d.size(), 0.0), b(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) b[i] = -d[i];
  const TTestResult r = paired_t_test(a, b);

  // Hand textbook computation: mean 0.02, sd sqrt(5e-5), t = mean/(sd/sqrt 5).
  const double sd = std::sqrt(5e-5);
  const double t_expected = 0.02 / (sd / std::sqrt(5.0));
  CHECK(r.t == doctest::Approx(t_expected).epsilon(1e-12));
  CHECK(r.df == 4);
  CHECK(r.p == doctest::Approx(vbtest::t_p_quadrature(r.t, 4)).epsilon(1e-6));

  CHECK_THROWS_AS(paired_t_test({1, 1}, {1, 1}), data_error);
}

TEST_CASE("paired t-test: p invariant under adding a constant to both samples") {
  Rng rng(62);
  std::vector<double> a(8), b(8);
  for (int i = 0; i < 8; ++i) {
    a[i] = rng.uniform(0, 1);
    b[i] = rng.uniform(0, 1);
  }
  const TTestResult r1 = paired_t_test(a, b);
  for (int i = 0; i < 8; ++i) {
    a[i] += 3.7;
    b[i] += 3.7;
  }
  const TTestResult r2 = paired_t_test(a, b);
  CHECK(r1.p == doctest::Approx(r2.p).epsilon(1e-12));
}

TEST_CASE("wilcoxon: all-positive differences reach W = n(n+1)/2") {
  const std::vector<double> a{5, 6, 7, 8, 9};
  const std::vector<double> b{1, 1.5, 2, 2.5, 3};
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  CHECK(r.w == doctest::Approx(15.0));
  CHECK(r.exact);
}

TEST_CASE("wilcoxon: d = [1, -1] has two-sided p = 1") {
  const WilcoxonResult r = wilcoxon_signed_rank({1, 0}, {0, 1});
  CHECK(r.p == doctest::Approx(1.0));
}

TEST_CASE("wilcoxon: exact p equals full enumeration on random no-tie fixtures") {
  Rng rng(63);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(11));  // up to 12
    std::vector<double> a(n), b(n, 0.0);
    for (int i = 0; i < n; ++i) {
      double d;
      do {
        d = rng.uniform(-1, 1);
      } while (d == 0.0);
      a[i] = d;
    }
    const WilcoxonResult r = wilcoxon_signed_rank(a, b);
    REQUIRE(r.exact);
    CHECK(r.p == doctest::Approx(vbtest::wilcoxon_p_enumeration(a)).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon: zero differences dropped; all-zero rejected") {
  const WilcoxonResult r = wilcoxon_signed_rank({1, 2, 5}, {1, 2, 3});
  CHECK(r.n_pairs == 1);
  CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2}, {1, 2}), data_error);
}

TEST_CASE("wilcoxon: tie-corrected normal approximation stays in range") {
  // Ties in |d| force the approximation path.
  std::vector<double> a{1, -1, 1, -1, 1, 1, -1, 1, 2, -2, 2, 2};
  std::vector<double> b(a.size(), 0.0);
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(r.exact);
  CHECK(r.p > 0.0);
  CHECK(r.p <= 1.0);
}

TEST_CASE("significance marks: strict thresholds and monotonicity") {
  CHECK(significance_mark(0.03) == SignificanceMark::one_star);
  CHECK(significance_mark(0.10) == SignificanceMark::none);
  CHECK(significance_mark(0.0005) == SignificanceMark::three_star);
  CHECK(significance_mark(0.05) == SignificanceMark::plus);
  CHECK(significance_mark(0.01) == SignificanceMark::one_star);
  CHECK(significance_mark(0.001) == SignificanceMark::two_star);
  CHECK(significance_mark(0.099999) == SignificanceMark::plus);

  Rng rng(64);
  for (int trial = 0; trial < 100; ++trial) {
    const double p1 = rng.uniform(0, 1);
    const double p2 = rng.uniform(0, 1);
    const auto lo = significance_mark(std::min(p1, p2));
    const auto hi = significance_mark(std::max(p1, p2));
    CHECK(static_cast<int>(lo) >= static_cast<int>(hi));
  }
}

TEST_CASE("improvement percent: reference values and the product identity") {
  CHECK(improvement_percent(1693, 10957) == doctest::Approx(647.19).epsilon(0.01 / 647.19));
  CHECK(improvement_percent(1693, 9117) == doctest::Approx(538.51).epsilon(0.01 / 538.51));
  CHECK(improvement_percent(5.0, 5.0) == 100.0);
  CHECK_THROWS_AS(improvement_percent(0.0, 1.0), data_error);

  Rng rng(65);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = rng.uniform(0.1, 100);
    const double y = rng.uniform(0.1, 100);
    CHECK(improvement_percent(x, y) * improvement_percent(y, x) ==
          doctest::Approx(10000.0).epsilon(1e-9));
  }
}

TEST_CASE("measure_resources: no-op task and a known allocation") {
  const ResourceRecord idle = measure_resources(Phase::application, "none", 2, []() {});
  CHECK(idle.wall_time_seconds < 0.010);
  CHECK(idle.peak_memory_mib <= 0.001);

  const std::int64_t elems = 4 << 20;  // 16 MiB of float
  const ResourceRecord alloc = measure_resources(Phase::training, "none", 3, [&]() {
    Tensor<float> t({elems});
    t.array().setConstant(1.0f);
  });
  CHECK(alloc.peak_memory_mib >= 16.0);
}

TEST_CASE("render_comparison: identical record sets show no marks") {
  std::vector<DiceRecord> records;
  for (int i = 0; i < 6; ++i) {
    for (int rank : {2, 3}) {
      records.push_back({"c" + std::to_string(i), "liver", rank, 0.8 + 0.01 * i});
    }
  }
  const auto tests = paired_tests_by_organ(records);
  REQUIRE(tests.size() == 1);
  CHECK(tests[0].mark == SignificanceMark::none);
  CHECK(tests[0].t_p_value == 1.0);

  const ComparisonReport rep = render_comparison(records, tests, {});
  CHECK(rep.quality_table.find("[0") == std::string::npos);  // nothing bolded
  const ComparisonReport rep2 = render_comparison(records, tests, {});
  CHECK(rep.dice_csv == rep2.dice_csv);
  CHECK(rep.stats_csv == rep2.stats_csv);
  CHECK(rep.tests_csv == rep2.tests_csv);
}

TEST_CASE("render_comparison: reference memory values reproduce the improvements") {
  std::vector<DiceRecord> records;
  std::vector<ResourceRecord> resources;
  const char* organs[5] = {"liver", "kidney_left", "kidney_right", "spleen", "pancreas"};
  Rng rng(66);
  for (const char* organ : organs) {
    for (int rank : {2, 3}) {
      for (int i = 0; i < 4; ++i) {
        records.push_back({"c" + std::to_string(i), organ, rank,
                           rng.uniform(0.8, 0.95) + (rank == 2 ? 0.01 : 0.0)});
      }
      ResourceRecord train;
      train.phase = Phase::training;
      train.organ = organ;
      train.rank = rank;
      train.peak_memory_mib = rank == 2 ? 1693.0 : 10957.0;
      train.wall_time_seconds = rank == 2 ? 567.0 : 607.0;
      resources.push_back(train);
      ResourceRecord app;
      app.phase = Phase::application;
      app.organ = organ;
      app.rank = rank;
      app.peak_memory_mib = rank == 2 ? 1693.0 : 9117.0;
      app.wall_time_seconds = rank == 2 ? 0.61 : 1.07;
      resources.push_back(app);
    }
  }
  const ComparisonReport rep =
      render_comparison(records, paired_tests_by_organ(records), resources);
  CHECK(rep.perf_table.find("647.19%") != std::string::npos);
  CHECK(rep.perf_table.find("538.51%") != std::string::npos);
  CHECK(rep.perf_table.find("107.05%") != std::string::npos);
}

TEST_CASE("render_comparison: missing architecture is reported as a gap") {
  std::vector<DiceRecord> records;
  for (int i = 0; i < 3; ++i) records.push_back({"c" + std::to_string(i), "spleen", 2, 0.9});
  const ComparisonReport rep = render_comparison(records, {}, {});
  REQUIRE(rep.gaps.size() == 1);
  CHECK(rep.gaps[0].find("spleen") != std::string::npos);
  CHECK(rep.gaps[0].find("rank3") != std::string::npos);
}
