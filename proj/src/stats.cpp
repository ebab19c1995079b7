#include "voxelbench/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace voxelbench {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * betacf(a, b, x) / a;
  }
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, int df) {
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return regularized_incomplete_beta(df / 2.0, 0.5, x);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double dsc(const ArrayX<std::uint8_t>& u, const ArrayX<std::uint8_t>& g) {
  if (u.size() != g.size()) {
    throw data_error("dsc requires congruent masks, got sizes " + std::to_string(u.size()) +
                     " and " + std::to_string(g.size()));
  }
  std::int64_t nu = 0, ng = 0, ni = 0;
  for (std::int64_t i = 0; i < u.size(); ++i) {
    const bool a = u[i] != 0;
    const bool b = g[i] != 0;
    nu += a;
    ng += b;
    ni += a && b;
  }
  if (nu + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(nu + ng);
}

double dsc(const LabelMask& u, const LabelMask& g) {
  if (u.geom.dims != g.geom.dims) {
    throw data_error("dsc requires congruent mask shapes");
  }
  return dsc(u.voxels, g.voxels);
}

double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) {
    throw data_error("quantile of an empty list");
  }
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

DescriptiveStats descriptive(const std::vector<double>& values) {
  if (values.empty()) {
    throw data_error("descriptive statistics of an empty list");
  }
  DescriptiveStats s;
  s.n = static_cast<int>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (s.n - 1));
  }
  s.median = quantile_type7(values, 0.5);
  s.iqr = s.n >= 2 ? quantile_type7(values, 0.75) - quantile_type7(values, 0.25) : 0.0;
  return s;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw data_error("paired t-test requires equal-length samples");
  }
  const int n = static_cast<int>(a.size());
  if (n < 2) {
    throw data_error("paired t-test requires n >= 2");
  }
  std::vector<double> d(a.size());
  bool any_nonzero = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d[i] = a[i] - b[i];
    any_nonzero |= d[i] != 0.0;
  }
  if (!any_nonzero) {
    throw data_error("paired t-test is degenerate: all differences are zero");
  }
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));

  TTestResult r;
  r.df = n - 1;
  if (sd == 0.0) {
    r.degenerate = true;
    r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw data_error("wilcoxon signed-rank test requires equal-length samples");
  }
  std::vector<double> d;
  d.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (diff != 0.0) d.push_back(diff);
  }
  if (d.empty()) {
    throw data_error("wilcoxon test is degenerate: all differences are zero");
  }
  const int n = static_cast<int>(d.size());

  // Rank |d| ascending with average ranks for ties.
  std::vector<int> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return std::fabs(d[x]) < std::fabs(d[y]); });
  std::vector<double> rank(d.size(), 0.0);
  bool ties = false;
  std::vector<int> tie_sizes;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           std::fabs(d[order[j + 1]]) == std::fabs(d[order[i]])) {
      ++j;
    }
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    if (j > i) ties = true;
    tie_sizes.push_back(static_cast<int>(j - i + 1));
    i = j + 1;
  }

  WilcoxonResult r;
  r.n_pairs = n;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0.0) r.w += rank[i];
  }

  const double mu = n * (n + 1) / 4.0;
  if (!ties && n <= 25) {
    // Exact null distribution: subset-sum counts over ranks 1..n.
    const int total = n * (n + 1) / 2;
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    for (int rv = 1; rv <= n; ++rv) {
      for (int w = total; w >= rv; --w) ways[w] += ways[w - rv];
    }
    // Symmetric distribution: two-sided p = P(|W - mu| >= |w_obs - mu|).
    // Compare in doubled integers to keep the arithmetic exact.
    const long obs2 = std::llround(std::fabs(2.0 * r.w - 2.0 * mu));
    double count = 0.0;
    for (int w = 0; w <= total; ++w) {
      if (std::llabs(2L * w - total) >= obs2) count += ways[w];
    }
    r.p = count / std::pow(2.0, n);
    r.exact = true;
    return r;
  }

  double tie_term = 0.0;
  for (int t : tie_sizes) {
    tie_term += static_cast<double>(t) * t * t - t;
  }
  const double var = n * (n + 1) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) {
    r.p = 1.0;
    return r;
  }
  double z = r.w - mu;
  if (z > 0.0) z -= 0.5;
  else if (z < 0.0) z += 0.5;
  z /= std::sqrt(var);
  r.p = std::erfc(std::fabs(z) / std::sqrt(2.0));
  if (r.p > 1.0) r.p = 1.0;
  return r;
}

SignificanceMark significance_mark(double p) {
  if (p < 0.001) return SignificanceMark::three_star;
  if (p < 0.01) return SignificanceMark::two_star;
  if (p < 0.05) return SignificanceMark::one_star;
  if (p < 0.10) return SignificanceMark::plus;
  return SignificanceMark::none;
}

const char* mark_text(SignificanceMark m) {
  switch (m) {
    case SignificanceMark::none: return "";
    case SignificanceMark::plus: return "+";
    case SignificanceMark::one_star: return "*";
    case SignificanceMark::two_star: return "**";
    case SignificanceMark::three_star: return "***";
  }
  return "";
}

double improvement_percent(double favored, double other) {
  if (!(favored > 0.0)) {
    throw data_error("improvement base must be > 0, got " + std::to_string(favored));
  }
  return other / favored * 100.0;
}

const char* phase_name(Phase p) {
  return p == Phase::training ? "training" : "application";
}

namespace {

// Display order: the known organ list first, anything else alphabetically.
std::vector<std::string> organ_display_order(const std::set<std::string>& organs) {
  std::vector<std::string> out;
  for (const char* o : {"liver", "kidney_left", "kidney_right", "spleen", "pancreas"}) {
    if (organs.count(o)) out.push_back(o);
  }
  for (const auto& o : organs) {
    if (std::find(out.begin(), out.end(), o) == out.end()) out.push_back(o);
  }
  return out;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

// Favorable cells are wrapped in [] with the significance mark appended.
std::string cell(const std::string& value, bool favored, SignificanceMark mark) {
  if (!favored) return value;
  return "[" + value + "]" + mark_text(mark);
}

}  // namespace

std::vector<PairedTestResult> paired_tests_by_organ(const std::vector<DiceRecord>& records) {
  std::map<std::string, std::map<std::string, std::map<int, double>>> by_organ_case;
  std::set<std::string> organs;
  for (const auto& r : records) {
    by_organ_case[r.organ][r.case_id][r.rank] = r.dsc;
    organs.insert(r.organ);
  }
  std::vector<PairedTestResult> out;
  for (const auto& organ : organ_display_order(organs)) {
    std::vector<double> a, b;  // rank2, rank3 paired by case
    for (const auto& [case_id, per_rank] : by_organ_case[organ]) {
      const auto i2 = per_rank.find(2);
      const auto i3 = per_rank.find(3);
      if (i2 != per_rank.end() && i3 != per_rank.end()) {
        a.push_back(i2->second);
        b.push_back(i3->second);
      }
    }
    if (a.size() < 2) continue;
    PairedTestResult t;
    t.organ = organ;
    t.n_pairs = static_cast<int>(a.size());
    bool all_equal = true;
    for (std::size_t i = 0; i < a.size(); ++i) all_equal &= a[i] == b[i];
    if (all_equal) {
      t.t_statistic = 0.0;
      t.t_p_value = 1.0;
      t.wilcoxon_w = 0.0;
      t.wilcoxon_p = 1.0;
      t.mark = SignificanceMark::none;
    } else {
      const TTestResult tt = paired_t_test(a, b);
      const WilcoxonResult wr = wilcoxon_signed_rank(a, b);
      t.t_statistic = tt.t;
      t.t_p_value = tt.p;
      t.wilcoxon_w = wr.w;
      t.wilcoxon_p = wr.p;
      t.mark = significance_mark(std::min(tt.p, wr.p));
    }
    out.push_back(t);
  }
  return out;
}

ComparisonReport render_comparison(const std::vector<DiceRecord>& records,
                                   const std::vector<PairedTestResult>& tests,
                                   const std::vector<ResourceRecord>& resources) {
  ComparisonReport rep;

  std::set<std::string> organs;
  std::map<std::string, std::map<int, std::vector<double>>> dsc_by;
  for (const auto& r : records) {
    organs.insert(r.organ);
    dsc_by[r.organ][r.rank].push_back(r.dsc);
  }
  const std::vector<std::string> order = organ_display_order(organs);

  std::map<std::string, const PairedTestResult*> test_by;
  for (const auto& t : tests) test_by[t.organ] = &t;

  // --- quality table -------------------------------------------------------
  {
    std::ostringstream os;
    const std::size_t w0 = 14, w = 22;
    os << pad("DSCs:", w0) << pad("Mean+/-Std.", 2 * w) << pad("Median~IQR", 2 * w) << "\n";
    os << pad("Organ", w0) << pad("2D U-Net", w) << pad("3D U-Net", w) << pad("2D U-Net", w)
       << pad("3D U-Net", w) << "\n";
    os << std::string(w0 + 4 * w, '-') << "\n";
    for (const auto& organ : order) {
      const auto& per_rank = dsc_by[organ];
      const bool has2 = per_rank.count(2) > 0;
      const bool has3 = per_rank.count(3) > 0;
      if (!has2 || !has3) {
        rep.gaps.push_back(organ + " is missing " + (has2 ? "rank3" : "rank2") + " records");
      }
      DescriptiveStats s2, s3;
      if (has2) s2 = descriptive(per_rank.at(2));
      if (has3) s3 = descriptive(per_rank.at(3));
      const PairedTestResult* t = test_by.count(organ) ? test_by[organ] : nullptr;
      const SignificanceMark mark_mean =
          t ? significance_mark(t->t_p_value) : SignificanceMark::none;
      const SignificanceMark mark_med =
          t ? significance_mark(t->wilcoxon_p) : SignificanceMark::none;

      const bool mean2_fav = has2 && has3 && s2.mean > s3.mean;
      const bool mean3_fav = has2 && has3 && s3.mean > s2.mean;
      const bool med2_fav = has2 && has3 && s2.median > s3.median;
      const bool med3_fav = has2 && has3 && s3.median > s2.median;

      auto ms = [&](const DescriptiveStats& s) {
        return fmt("%.2f", s.mean) + "+/-" + fmt("%.2f", s.std);
      };
      auto mi = [&](const DescriptiveStats& s) {
        return fmt("%.2f", s.median) + "~" + fmt("%.2f", s.iqr);
      };
      os << pad(organ, w0);
      os << pad(has2 ? cell(ms(s2), mean2_fav, mark_mean) : "n/a", w);
      os << pad(has3 ? cell(ms(s3), mean3_fav, mark_mean) : "n/a", w);
      os << pad(has2 ? cell(mi(s2), med2_fav, mark_med) : "n/a", w);
      os << pad(has3 ? cell(mi(s3), med3_fav, mark_med) : "n/a", w);
      os << "\n";
    }
    os << "\nLegend: [] marks the favorable result; +/*/**/*** : p<0.10/0.05/0.01/0.001 from\n"
          "paired T-tests (Mean columns) and Wilcoxon signed-rank tests (Median columns).\n";
    for (const auto& g : rep.gaps) os << "gap: " << g << "\n";
    rep.quality_table = os.str();
  }

  // --- performance table ---------------------------------------------------
  {
    // Per organ x rank x phase means of the raw records.
    std::map<std::string, std::map<int, std::map<int, std::pair<double, double>>>> agg;
    std::set<std::string> perf_organs;
    for (const auto& organ : order) {
      for (int rank : {2, 3}) {
        for (Phase phase : {Phase::training, Phase::application}) {
          std::vector<double> mem, sec;
          for (const auto& r : resources) {
            if (r.organ == organ && r.rank == rank && r.phase == phase) {
              mem.push_back(r.peak_memory_mib);
              sec.push_back(r.wall_time_seconds);
            }
          }
          if (mem.empty()) continue;
          perf_organs.insert(organ);
          agg[organ][rank][static_cast<int>(phase)] = {
              std::accumulate(mem.begin(), mem.end(), 0.0) / mem.size(),
              std::accumulate(sec.begin(), sec.end(), 0.0) / sec.size()};
        }
      }
    }

    std::ostringstream os;
    const std::size_t w0 = 18, w = 16;
    os << pad("Performance:", w0) << pad("Memory", 4 * w) << pad("Time", 4 * w) << "\n";
    os << pad("", w0) << pad("Training [MiB]", 2 * w) << pad("Application [MiB]", 2 * w)
       << pad("Training [s]", 2 * w) << pad("Application [s]", 2 * w) << "\n";
    os << pad("Organ", w0);
    for (int i = 0; i < 4; ++i) os << pad("2D U-Net", w) << pad("3D U-Net", w);
    os << "\n" << std::string(w0 + 8 * w, '-') << "\n";

    // column definition: (phase, mem-or-time)
    struct Col {
      Phase phase;
      bool mem;
    };
    const Col cols[4] = {{Phase::training, true},
                         {Phase::application, true},
                         {Phase::training, false},
                         {Phase::application, false}};

    std::map<int, std::map<int, std::vector<double>>> col_values;  // col -> rank -> per-organ
    for (const auto& organ : order) {
      if (!perf_organs.count(organ)) continue;
      os << pad(organ, w0);
      for (int ci = 0; ci < 4; ++ci) {
        for (int rank : {2, 3}) {
          const auto it = agg[organ][rank].find(static_cast<int>(cols[ci].phase));
          if (it == agg[organ][rank].end()) {
            os << pad("n/a", w);
            continue;
          }
          const double v = cols[ci].mem ? it->second.first : it->second.second;
          col_values[ci][rank].push_back(v);
          os << pad(fmt(cols[ci].mem ? "%.1f" : "%.3f", v), w);
        }
      }
      os << "\n";
    }

    // Summary rows over the per-organ values.
    auto summary_row = [&](const char* name, bool use_median) {
      os << pad(name, w0);
      for (int ci = 0; ci < 4; ++ci) {
        DescriptiveStats s2, s3;
        const bool ok = col_values[ci].count(2) && col_values[ci].count(3) &&
                        col_values[ci][2].size() == col_values[ci][3].size() &&
                        !col_values[ci][2].empty();
        if (!ok) {
          os << pad("n/a", w) << pad("n/a", w);
          continue;
        }
        s2 = descriptive(col_values[ci][2]);
        s3 = descriptive(col_values[ci][3]);
        const double v2 = use_median ? s2.median : s2.mean;
        const double v3 = use_median ? s3.median : s3.mean;
        SignificanceMark mark = SignificanceMark::none;
        if (col_values[ci][2].size() >= 2) {
          bool all_equal = true;
          for (std::size_t i = 0; i < col_values[ci][2].size(); ++i) {
            all_equal &= col_values[ci][2][i] == col_values[ci][3][i];
          }
          if (!all_equal) {
            const TTestResult tt = paired_t_test(col_values[ci][2], col_values[ci][3]);
            const WilcoxonResult wr = wilcoxon_signed_rank(col_values[ci][2], col_values[ci][3]);
            mark = use_median ? significance_mark(wr.p) : significance_mark(tt.p);
          }
        }
        auto text2 = use_median ? fmt("%.2f", s2.median) + "~" + fmt("%.2f", s2.iqr)
                                : fmt("%.2f", s2.mean) + "+/-" + fmt("%.2f", s2.std);
        auto text3 = use_median ? fmt("%.2f", s3.median) + "~" + fmt("%.2f", s3.iqr)
                                : fmt("%.2f", s3.mean) + "+/-" + fmt("%.2f", s3.std);
        os << pad(cell(text2, v2 < v3, mark), w) << pad(cell(text3, v3 < v2, mark), w);
      }
      os << "\n";
    };
    summary_row("Mean+/-Std.", false);
    summary_row("Median~IQR", true);

    auto improvement_row = [&](const char* name, bool use_median) {
      os << pad(name, w0);
      for (int ci = 0; ci < 4; ++ci) {
        const bool ok = col_values[ci].count(2) && col_values[ci].count(3) &&
                        !col_values[ci][2].empty() && !col_values[ci][3].empty();
        if (!ok) {
          os << pad("n/a", w) << pad("n/a", w);
          continue;
        }
        const DescriptiveStats s2 = descriptive(col_values[ci][2]);
        const DescriptiveStats s3 = descriptive(col_values[ci][3]);
        const double v2 = use_median ? s2.median : s2.mean;
        const double v3 = use_median ? s3.median : s3.mean;
        if (v2 <= 0.0 || v3 <= 0.0) {
          os << pad("n/a", w) << pad("n/a", w);
          continue;
        }
        // Lower resource use is favorable; the improvement is printed on the
        // favored side with the other side as N/A.
        if (v2 <= v3) {
          os << pad("[" + fmt("%.2f", improvement_percent(v2, v3)) + "%]", w) << pad("N/A", w);
        } else {
          os << pad("N/A", w) << pad("[" + fmt("%.2f", improvement_percent(v3, v2)) + "%]", w);
        }
      }
      os << "\n";
    };
    improvement_row("Mean Improvement", false);
    improvement_row("Median Improvement", true);

    os << "\nLegend: [] marks the favorable (cheaper) result; marks as in the quality table.\n";
    rep.perf_table = os.str();
  }

  // --- CSV outputs ----------------------------------------------------------
  {
    std::vector<DiceRecord> sorted = records;
    std::sort(sorted.begin(), sorted.end(), [](const DiceRecord& a, const DiceRecord& b) {
      return std::tie(a.organ, a.rank, a.case_id) < std::tie(b.organ, b.rank, b.case_id);
    });
    std::ostringstream os;
    os << "case_id,organ,arch,dsc\n";
    for (const auto& r : sorted) {
      os << r.case_id << "," << r.organ << ",rank" << r.rank << "," << fmt("%.17g", r.dsc)
         << "\n";
    }
    rep.dice_csv = os.str();
  }
  {
    std::ostringstream os;
    os << "organ,arch,mean,std,median,iqr,n\n";
    for (const auto& organ : order) {
      for (int rank : {2, 3}) {
        if (!dsc_by[organ].count(rank)) continue;
        const DescriptiveStats s = descriptive(dsc_by[organ][rank]);
        os << organ << ",rank" << rank << "," << fmt("%.9g", s.mean) << "," << fmt("%.9g", s.std)
           << "," << fmt("%.9g", s.median) << "," << fmt("%.9g", s.iqr) << "," << s.n << "\n";
      }
    }
    rep.stats_csv = os.str();
  }
  {
    std::ostringstream os;
    os << "organ,t,t_p,w,w_p,mark\n";
    for (const auto& t : tests) {
      os << t.organ << "," << fmt("%.9g", t.t_statistic) << "," << fmt("%.9g", t.t_p_value) << ","
         << fmt("%.9g", t.wilcoxon_w) << "," << fmt("%.9g", t.wilcoxon_p) << ","
         << mark_text(t.mark) << "\n";
    }
    rep.tests_csv = os.str();
  }
  {
    std::vector<const ResourceRecord*> sorted;
    for (const auto& r : resources) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ResourceRecord* a, const ResourceRecord* b) {
                       return std::tie(a->organ, a->rank, a->phase) <
                              std::tie(b->organ, b->rank, b->phase);
                     });
    std::ostringstream os;
    os << "organ,arch,phase,peak_mib,seconds\n";
    for (const auto* r : sorted) {
      os << r->organ << ",rank" << r->rank << "," << phase_name(r->phase) << ","
         << fmt("%.3f", r->peak_memory_mib) << "," << fmt("%.6f", r->wall_time_seconds) << "\n";
    }
    rep.perf_csv = os.str();
  }

  return rep;
}

void write_report_files(const ComparisonReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::string*> files[] = {
      {"dice.csv", &report.dice_csv},     {"stats.csv", &report.stats_csv},
      {"tests.csv", &report.tests_csv},   {"perf.csv", &report.perf_csv},
      {"quality_table.txt", &report.quality_table}, {"perf_table.txt", &report.perf_table},
  };
  for (const auto& [name, content] : files) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
      throw std::runtime_error("cannot open \"" + path + "\" for writing");
    }
    out.write(content->data(), static_cast<std::streamsize>(content->size()));
  }
}

}  // namespace voxelbench
