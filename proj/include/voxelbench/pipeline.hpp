#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxelbench/forest.hpp"
#include "voxelbench/grid.hpp"
#include "voxelbench/raster_io.hpp"
#include "voxelbench/stats.hpp"
#include "voxelbench/unet.hpp"

namespace voxelbench {

enum class VoiSource { ground_truth, rrf };
enum class FoldMode { partition, independent };

// Cross-validation experiment description, parsed from key = value text.
struct ExperimentConfig {
  std::string manifest_path;
  std::string out_dir = "crossval_out";
  std::vector<std::string> organs;  // empty: all organs listed by the manifest
  std::map<std::string, double> thresholds;
  int folds = 5;
  std::uint64_t seed = 1;
  std::vector<int> ranks = {2, 3};

  int unet_depth = 4;
  int unet_base_channels = 8;
  int voi_extent = 96;
  int epochs = 100;
  int batch_size = 8;
  double learning_rate = 1e-3;
  int float_width = 32;
  double resample_mm = 2.0;

  ForestHyper rrf;
  VoiSource voi_source = VoiSource::ground_truth;
  FoldMode fold_mode = FoldMode::partition;
  int jobs = 0;  // worker threads; 0 picks the hardware concurrency

  // Organ-specific threshold; pancreas defaults to 0.3, everything else 0.5.
  double threshold_for(const std::string& organ) const;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& path);

struct FoldAssignment {
  int fold_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Seeded shuffle, then k near-equal test blocks (remainder to the earliest
// folds). partition mode covers every case exactly once across test sets;
// independent mode redraws the split per fold.
std::vector<FoldAssignment> make_folds(const std::vector<std::string>& case_ids, int k,
                                       std::uint64_t seed,
                                       FoldMode mode = FoldMode::partition);

// One case, fully preprocessed: reoriented to RAI and isotropically resampled,
// plus the unresampled RAI labels used as the scoring reference.
struct LoadedCase {
  std::string id;
  Grid<float> intensity;      // RAI, isotropic
  LabelMask labels;           // RAI, isotropic (nearest)
  LabelMask fullres_labels;   // RAI, original resolution
  std::map<std::string, int> organ_labels;
};

LoadedCase load_preprocessed_case(const ManifestCase& mc, double resample_mm);

std::uint64_t derive_seed(std::uint64_t master, const std::string& organ, int fold, int rank);

struct CrossvalOutcome {
  std::vector<DiceRecord> records;
  std::vector<PairedTestResult> tests;
  std::vector<ResourceRecord> resources;
  ComparisonReport report;
  std::map<std::string, std::uint64_t> voi_checksums;  // "organ/fold" -> fnv64
};

// Full two-architecture cross-validation; writes report files, model files
// and a run log under config.out_dir.
CrossvalOutcome run_crossval(const ExperimentConfig& config);

// Re-render the report from dice.csv (and perf.csv when present) in a
// directory produced by run_crossval.
ComparisonReport rebuild_report(const std::string& dir);

struct ApplyResult {
  LabelMask mask;          // reconstructed in the target geometry
  BoundingBoxMM box;
  double dsc = -1.0;       // set when a reference was supplied
  double seconds = 0.0;
  double peak_mib = 0.0;
};

// One application-path execution: crop the VOI, run the network, threshold,
// back-project. Shared by run_crossval and the segment command.
ApplyResult apply_model(const AnyUNetModel& model, const Grid<float>& intensity,
                        const BoundingBoxMM& box, double threshold,
                        const GridGeometry& target_geometry,
                        const LabelMask* reference = nullptr, int reference_label = 0);

std::uint64_t fnv64_bytes(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace voxelbench
