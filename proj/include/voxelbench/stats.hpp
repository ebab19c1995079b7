#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "voxelbench/grid.hpp"
#include "voxelbench/memtrack.hpp"

namespace voxelbench {

// Dice similarity coefficient 2|U n G| / (|U| + |G|); two empty masks agree
// perfectly and score 1.
double dsc(const ArrayX<std::uint8_t>& u, const ArrayX<std::uint8_t>& g);
double dsc(const LabelMask& u, const LabelMask& g);

struct DescriptiveStats {
  double mean = 0.0;
  double std = 0.0;  // sample std, n-1
  double median = 0.0;
  double iqr = 0.0;  // Q3 - Q1
  int n = 0;
};

// Linear-interpolation quantile between order statistics (R default, type 7).
double quantile_type7(std::vector<double> values, double p);

DescriptiveStats descriptive(const std::vector<double>& values);

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;        // two-sided
  bool degenerate = false;  // zero-variance differences with nonzero mean: t inf, p -> 0
};

// Paired two-sided t-test on equal-length samples.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct WilcoxonResult {
  double w = 0.0;  // sum of positive-difference ranks
  double p = 1.0;  // two-sided
  int n_pairs = 0; // pairs remaining after dropping zero differences
  bool exact = false;
};

// Wilcoxon signed-rank test: zero differences dropped, average ranks for
// ties; exact null distribution when n <= 25 without ties, else normal
// approximation with tie correction and 0.5 continuity correction.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

// Two-sided p for a paired t statistic, |error| <= 1e-8.
double student_t_two_sided_p(double t, int df);

double normal_cdf(double z);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

enum class SignificanceMark { none, plus, one_star, two_star, three_star };

// Strict thresholds: + (<0.10), * (<0.05), ** (<0.01), *** (<0.001).
SignificanceMark significance_mark(double p);
const char* mark_text(SignificanceMark m);

// (other / favored) * 100; the favored (smaller-is-better) side is the base.
double improvement_percent(double favored, double other);

struct DiceRecord {
  std::string case_id;
  std::string organ;
  int rank = 2;  // network spatial rank, 2 or 3
  double dsc = 0.0;
};

struct PairedTestResult {
  std::string organ;
  double t_statistic = 0.0;
  double t_p_value = 1.0;
  double wilcoxon_w = 0.0;
  double wilcoxon_p = 1.0;
  int n_pairs = 0;
  SignificanceMark mark = SignificanceMark::none;  // from min(t_p, wilcoxon_p)
};

enum class Phase { training, application };
const char* phase_name(Phase p);

struct ResourceRecord {
  Phase phase = Phase::training;
  double peak_memory_mib = 0.0;
  double wall_time_seconds = 0.0;
  int rank = 2;
  std::string organ;
};

// Wall time by monotonic clock, peak memory from the tracked-allocator
// high-water mark. Wrap one task at a time per process; concurrent tasks
// share the allocator counters and pollute each other's peaks.
template <typename F>
ResourceRecord measure_resources(Phase phase, const std::string& organ, int rank, F&& task) {
  ResourceRecord r;
  r.phase = phase;
  r.organ = organ;
  r.rank = rank;
  const std::size_t base = memtrack::current_bytes();
  memtrack::reset_peak();
  const auto t0 = std::chrono::steady_clock::now();
  task();
  const auto t1 = std::chrono::steady_clock::now();
  r.wall_time_seconds = std::chrono::duration<double>(t1 - t0).count();
  const std::size_t peak = memtrack::peak_bytes();
  r.peak_memory_mib = peak > base ? static_cast<double>(peak - base) / (1024.0 * 1024.0) : 0.0;
  return r;
}

struct ComparisonReport {
  std::string quality_table;
  std::string perf_table;
  std::string dice_csv;
  std::string stats_csv;
  std::string tests_csv;
  std::string perf_csv;
  std::vector<std::string> gaps;  // organs missing one architecture
};

// Per-organ paired tests between the two ranks, pairing records by case id.
std::vector<PairedTestResult> paired_tests_by_organ(const std::vector<DiceRecord>& records);

ComparisonReport render_comparison(const std::vector<DiceRecord>& records,
                                   const std::vector<PairedTestResult>& tests,
                                   const std::vector<ResourceRecord>& resources);

void write_report_files(const ComparisonReport& report, const std::string& dir);

}  // namespace voxelbench
