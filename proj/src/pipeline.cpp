#include "voxelbench/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "voxelbench/rng.hpp"

namespace voxelbench {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

}  // namespace

std::uint64_t fnv64_bytes(const void* data, std::size_t bytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

double ExperimentConfig::threshold_for(const std::string& organ) const {
  const auto it = thresholds.find(organ);
  if (it != thresholds.end()) return it->second;
  return organ == "pancreas" ? 0.3 : 0.5;
}

void ExperimentConfig::validate() const {
  if (manifest_path.empty()) throw data_error("config: manifest path is required");
  if (folds < 2) throw data_error("config: folds must be >= 2");
  if (ranks.empty()) throw data_error("config: at least one rank required");
  for (int r : ranks) {
    if (r != 2 && r != 3) throw data_error("config: ranks must be drawn from {2, 3}");
  }
  for (const auto& [organ, theta] : thresholds) {
    if (!(theta > 0.0 && theta < 1.0)) {
      throw data_error("config: threshold for " + organ + " must lie in (0,1)");
    }
  }
  if (!(resample_mm > 0.0)) throw data_error("config: resample_mm must be > 0");
  UNetConfig probe;
  probe.rank = 3;
  probe.depth = unet_depth;
  probe.base_channels = unet_base_channels;
  probe.input_extent = voi_extent;
  probe.validate();
}

ExperimentConfig parse_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("cannot open config \"" + path + "\"");
  }
  ExperimentConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw data_error(path + ": line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto fail = [&](const std::string& what) {
      throw data_error(path + ": line " + std::to_string(line_no) + ": " + what);
    };
    try {
      if (key == "manifest") cfg.manifest_path = value;
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "organs") cfg.organs = split_list(value);
      else if (key == "folds") cfg.folds = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "ranks") {
        cfg.ranks.clear();
        for (const auto& r : split_list(value)) cfg.ranks.push_back(std::stoi(r));
      } else if (key.rfind("threshold.", 0) == 0) {
        cfg.thresholds[key.substr(10)] = std::stod(value);
      } else if (key == "unet_depth") cfg.unet_depth = std::stoi(value);
      else if (key == "unet_base_channels") cfg.unet_base_channels = std::stoi(value);
      else if (key == "voi_extent") cfg.voi_extent = std::stoi(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
      else if (key == "float_width") cfg.float_width = std::stoi(value);
      else if (key == "resample_mm") cfg.resample_mm = std::stod(value);
      else if (key == "jobs") cfg.jobs = std::stoi(value);
      else if (key == "voi_source") {
        if (value == "ground_truth") cfg.voi_source = VoiSource::ground_truth;
        else if (value == "rrf") cfg.voi_source = VoiSource::rrf;
        else fail("voi_source must be ground_truth or rrf");
      } else if (key == "fold_mode") {
        if (value == "partition") cfg.fold_mode = FoldMode::partition;
        else if (value == "independent") cfg.fold_mode = FoldMode::independent;
        else fail("fold_mode must be partition or independent");
      } else if (key == "rrf_trees") cfg.rrf.tree_count = std::stoi(value);
      else if (key == "rrf_max_depth") cfg.rrf.max_depth = std::stoi(value);
      else if (key == "rrf_min_leaf") cfg.rrf.min_leaf = std::stoi(value);
      else if (key == "rrf_candidate_splits") cfg.rrf.candidate_splits = std::stoi(value);
      else if (key == "rrf_bootstrap_fraction") cfg.rrf.bootstrap_fraction = std::stod(value);
      else if (key == "rrf_stride") cfg.rrf.stride = std::stoi(value);
      else if (key == "rrf_cylinder_radius") cfg.rrf.cylinder_radius = std::stod(value);
      else fail("unknown key \"" + key + "\"");
    } catch (const std::invalid_argument&) {
      fail("bad value \"" + value + "\" for key \"" + key + "\"");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<FoldAssignment> make_folds(const std::vector<std::string>& case_ids, int k,
                                       std::uint64_t seed, FoldMode mode) {
  const int n = static_cast<int>(case_ids.size());
  if (n < k) {
    throw data_error("cannot build " + std::to_string(k) + " folds from " + std::to_string(n) +
                     " cases");
  }
  std::vector<FoldAssignment> folds;
  auto block_sizes = [&]() {
    std::vector<int> sizes(k, n / k);
    for (int i = 0; i < n % k; ++i) sizes[i] += 1;
    return sizes;
  }();

  if (mode == FoldMode::partition) {
    std::vector<std::string> ids = case_ids;
    Rng rng(mix_seed(seed, hash_string("folds")));
    rng.shuffle(ids);
    int offset = 0;
    for (int f = 0; f < k; ++f) {
      FoldAssignment fa;
      fa.fold_index = f;
      fa.test_ids.assign(ids.begin() + offset, ids.begin() + offset + block_sizes[f]);
      for (int i = 0; i < n; ++i) {
        if (i < offset || i >= offset + block_sizes[f]) fa.train_ids.push_back(ids[i]);
      }
      offset += block_sizes[f];
      std::sort(fa.train_ids.begin(), fa.train_ids.end());
      std::sort(fa.test_ids.begin(), fa.test_ids.end());
      folds.push_back(std::move(fa));
    }
    return folds;
  }

  for (int f = 0; f < k; ++f) {
    std::vector<std::string> ids = case_ids;
    Rng rng(mix_seed(seed, hash_string("folds-indep") ^ static_cast<std::uint64_t>(f)));
    rng.shuffle(ids);
    FoldAssignment fa;
    fa.fold_index = f;
    fa.test_ids.assign(ids.begin(), ids.begin() + block_sizes[0]);
    fa.train_ids.assign(ids.begin() + block_sizes[0], ids.end());
    std::sort(fa.train_ids.begin(), fa.train_ids.end());
    std::sort(fa.test_ids.begin(), fa.test_ids.end());
    folds.push_back(std::move(fa));
  }
  return folds;
}

LoadedCase load_preprocessed_case(const ManifestCase& mc, double resample_mm) {
  LoadedCase lc;
  lc.id = mc.case_id;
  lc.organ_labels = mc.organ_label_map;

  const AnyGrid raw_int = read_volume(mc.intensity_path);
  const AnyGrid raw_lbl = read_volume(mc.label_path);
  validate_case(geometry_of(raw_int), geometry_of(raw_lbl), mc.case_id);

  const Grid<float> rai_int = reorient_to_rai(as_intensity(raw_int));
  lc.fullres_labels = reorient_to_rai(as_labels(raw_lbl));
  lc.intensity = resample_isotropic(rai_int, resample_mm, Interp::trilinear);
  lc.labels = resample_isotropic(lc.fullres_labels, resample_mm, Interp::nearest);
  return lc;
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& organ, int fold, int rank) {
  std::uint64_t s = mix_seed(master, hash_string(organ));
  s = mix_seed(s, static_cast<std::uint64_t>(fold) + 0x10001);
  s = mix_seed(s, static_cast<std::uint64_t>(rank) + 0x20002);
  return s;
}

namespace {

template <typename S>
ApplyResult apply_model_impl(const UNetModel<S>& model, const Grid<float>& intensity,
                             const BoundingBoxMM& box, double threshold,
                             const GridGeometry& target_geometry, const LabelMask* reference,
                             int reference_label) {
  ApplyResult out;
  out.box = box;
  const ResourceRecord rr =
      measure_resources(Phase::application, "", model.config.rank, [&]() {
        const VoiPatch patch =
            crop_resample_voi(intensity, box, model.config.input_extent, nullptr, 0, "");
        const VoiPatch prob = predict_voi(model, patch);
        const VoiPatch mask = threshold_mask(prob, threshold);
        out.mask = reconstruct_mask(mask, box, target_geometry);
      });
  out.seconds = rr.wall_time_seconds;
  out.peak_mib = rr.peak_memory_mib;
  if (reference != nullptr) {
    LabelMask ref_bin(reference->geom);
    ref_bin.voxels = (reference->voxels == static_cast<std::uint8_t>(reference_label))
                         .cast<std::uint8_t>();
    out.dsc = dsc(out.mask, ref_bin);
  }
  return out;
}

}  // namespace

ApplyResult apply_model(const AnyUNetModel& model, const Grid<float>& intensity,
                        const BoundingBoxMM& box, double threshold,
                        const GridGeometry& target_geometry, const LabelMask* reference,
                        int reference_label) {
  return std::visit(
      [&](const auto& m) {
        return apply_model_impl(m, intensity, box, threshold, target_geometry, reference,
                                reference_label);
      },
      model);
}

namespace {

struct JobResult {
  std::vector<DiceRecord> records;
  std::vector<ResourceRecord> resources;
  std::uint64_t checksum = 0;
  std::string log;
};

struct CrossvalContext {
  const ExperimentConfig& cfg;
  const std::vector<LoadedCase>& cases;
  const std::vector<FoldAssignment>& folds;
  std::string models_dir;
};

const LoadedCase& case_by_id(const std::vector<LoadedCase>& cases, const std::string& id) {
  for (const auto& c : cases) {
    if (c.id == id) return c;
  }
  throw data_error("case \"" + id + "\" vanished from the loaded set");
}

template <typename S>
void run_rank(const CrossvalContext& ctx, const std::string& organ, const FoldAssignment& fold,
              int rank, const std::vector<VoiPatch>& train_patches,
              const std::vector<std::pair<const LoadedCase*, BoundingBoxMM>>& test_set,
              JobResult& result) {
  const ExperimentConfig& cfg = ctx.cfg;

  UNetConfig uc;
  uc.rank = rank;
  uc.depth = cfg.unet_depth;
  uc.base_channels = cfg.unet_base_channels;
  uc.input_extent = cfg.voi_extent;

  TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.seed = derive_seed(cfg.seed, organ, fold.fold_index, rank);
  tc.learning_rate = cfg.learning_rate;
  tc.float_width = cfg.float_width;

  TrainOutcome<S> outcome;
  ResourceRecord train_rr = measure_resources(Phase::training, organ, rank, [&]() {
    outcome = train_unet<S>(uc, train_patches, tc);
  });
  result.resources.push_back(train_rr);

  const std::string model_path =
      (std::filesystem::path(ctx.models_dir) /
       ("unet_" + organ + "_rank" + std::to_string(rank) + "_fold" +
        std::to_string(fold.fold_index) + ".vbm"))
          .string();
  save_model(outcome.model, model_path);

  const double theta = cfg.threshold_for(organ);
  const AnyUNetModel model_any = outcome.model;
  for (const auto& [lc, box] : test_set) {
    const int organ_label = lc->organ_labels.at(organ);
    ApplyResult ar = apply_model(model_any, lc->intensity, box, theta,
                                 lc->fullres_labels.geom, &lc->fullres_labels, organ_label);
    ResourceRecord app_rr;
    app_rr.phase = Phase::application;
    app_rr.organ = organ;
    app_rr.rank = rank;
    app_rr.wall_time_seconds = ar.seconds;
    app_rr.peak_memory_mib = ar.peak_mib;
    result.resources.push_back(app_rr);

    DiceRecord rec;
    rec.case_id = cfg.fold_mode == FoldMode::independent
                      ? lc->id + "@f" + std::to_string(fold.fold_index)
                      : lc->id;
    rec.organ = organ;
    rec.rank = rank;
    rec.dsc = ar.dsc;
    result.records.push_back(rec);
  }
}

JobResult run_fold_organ(const CrossvalContext& ctx, const std::string& organ,
                         const FoldAssignment& fold) {
  const ExperimentConfig& cfg = ctx.cfg;
  JobResult result;

  // Ground-truth boxes of the training cases drive both VOI sources.
  std::vector<std::pair<const LoadedCase*, BoundingBoxMM>> train_set, test_set;
  for (const auto& id : fold.train_ids) {
    const LoadedCase& lc = case_by_id(ctx.cases, id);
    train_set.push_back({&lc, extract_gt_bbox(lc.labels, lc.organ_labels.at(organ), id)});
  }
  if (cfg.voi_source == VoiSource::ground_truth) {
    for (const auto& id : fold.test_ids) {
      const LoadedCase& lc = case_by_id(ctx.cases, id);
      test_set.push_back({&lc, extract_gt_bbox(lc.labels, lc.organ_labels.at(organ), id)});
    }
  } else {
    std::vector<TrainingCase> forest_cases;
    for (const auto& [lc, box] : train_set) forest_cases.push_back({&lc->intensity, box});
    ForestHyper hyper = cfg.rrf;
    hyper.seed = derive_seed(cfg.seed, organ + "/rrf", fold.fold_index, 0);
    const Forest forest = train_forest(forest_cases, organ, hyper);
    for (const auto& id : fold.test_ids) {
      const LoadedCase& lc = case_by_id(ctx.cases, id);
      const BoxPrediction pred = predict_bbox(forest, lc.intensity);
      if (!pred.ordered()) {
        throw data_error("voi detection produced unordered walls (case \"" + id + "\", organ " +
                         organ + ", stage detect-voi)");
      }
      test_set.push_back({&lc, pred.box});
    }
  }

  // One patch set per fold, consumed byte-identically by both ranks.
  std::vector<VoiPatch> train_patches;
  std::uint64_t checksum = 0xcbf29ce484222325ull;
  for (const auto& [lc, box] : train_set) {
    VoiPatch p = crop_resample_voi(lc->intensity, box, cfg.voi_extent, &lc->labels,
                                   lc->organ_labels.at(organ), lc->id);
    checksum = fnv64_bytes(p.intensities.data(),
                           static_cast<std::size_t>(p.intensities.size()) * sizeof(float),
                           checksum);
    checksum = fnv64_bytes(p.labels.data(), static_cast<std::size_t>(p.labels.size()), checksum);
    train_patches.push_back(std::move(p));
  }
  for (const auto& [lc, box] : test_set) {
    const Vector6d v = box.as_vector();
    checksum = fnv64_bytes(v.data(), 6 * sizeof(double), checksum);
  }
  result.checksum = checksum;

  for (int rank : cfg.ranks) {
    try {
      if (cfg.float_width == 64) {
        run_rank<double>(ctx, organ, fold, rank, train_patches, test_set, result);
      } else {
        run_rank<float>(ctx, organ, fold, rank, train_patches, test_set, result);
      }
    } catch (const std::exception& e) {
      throw data_error("fold " + std::to_string(fold.fold_index) + " aborted (organ " + organ +
                       ", rank " + std::to_string(rank) + ", stage train/apply): " + e.what());
    }
  }

  std::ostringstream log;
  log << "organ " << organ << " fold " << fold.fold_index << " voi_checksum " << std::hex
      << checksum << std::dec << " train " << fold.train_ids.size() << " test "
      << fold.test_ids.size() << "\n";
  result.log = log.str();
  return result;
}

}  // namespace

CrossvalOutcome run_crossval(const ExperimentConfig& config) {
  config.validate();
  const DatasetManifest manifest = load_manifest(config.manifest_path);
  if (manifest.cases.empty()) {
    throw data_error("manifest lists no cases");
  }

  std::vector<std::string> organs = config.organs;
  if (organs.empty()) {
    for (const auto& [name, label] : manifest.cases.front().organ_label_map) {
      organs.push_back(name);
    }
  }
  for (const auto& organ : organs) {
    for (const auto& mc : manifest.cases) {
      if (!mc.organ_label_map.count(organ)) {
        throw data_error("case \"" + mc.case_id + "\" does not list organ \"" + organ + "\"");
      }
    }
  }

  std::vector<LoadedCase> cases;
  cases.reserve(manifest.cases.size());
  for (const auto& mc : manifest.cases) {
    cases.push_back(load_preprocessed_case(mc, config.resample_mm));
  }

  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  const std::vector<FoldAssignment> folds =
      make_folds(ids, config.folds, config.seed, config.fold_mode);

  const std::string models_dir = (std::filesystem::path(config.out_dir) / "models").string();
  std::filesystem::create_directories(models_dir);
  CrossvalContext ctx{config, cases, folds, models_dir};

  struct Job {
    std::string organ;
    const FoldAssignment* fold;
  };
  std::vector<Job> jobs;
  for (const auto& organ : organs) {
    for (const auto& fold : folds) jobs.push_back({organ, &fold});
  }

  std::vector<JobResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  int workers = config.jobs > 0 ? config.jobs
                                : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  workers = std::min<int>(workers, static_cast<int>(jobs.size()));

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        results[i] = run_fold_organ(ctx, jobs[i].organ, *jobs[i].fold);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  CrossvalOutcome outcome;
  std::ostringstream run_log;
  run_log << "cases " << cases.size() << " folds " << config.folds << " seed " << config.seed
          << "\n";
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    outcome.records.insert(outcome.records.end(), results[i].records.begin(),
                           results[i].records.end());
    outcome.resources.insert(outcome.resources.end(), results[i].resources.begin(),
                             results[i].resources.end());
    outcome.voi_checksums[jobs[i].organ + "/" + std::to_string(jobs[i].fold->fold_index)] =
        results[i].checksum;
    run_log << results[i].log;
  }

  outcome.tests = paired_tests_by_organ(outcome.records);
  outcome.report = render_comparison(outcome.records, outcome.tests, outcome.resources);
  write_report_files(outcome.report, config.out_dir);
  {
    std::ofstream log((std::filesystem::path(config.out_dir) / "run.log").string(),
                      std::ios::trunc);
    log << run_log.str();
  }
  return outcome;
}

ComparisonReport rebuild_report(const std::string& dir) {
  const std::string dice_path = (std::filesystem::path(dir) / "dice.csv").string();
  std::ifstream in(dice_path);
  if (!in) {
    throw data_error("cannot open \"" + dice_path + "\"");
  }
  std::string line;
  if (!std::getline(in, line) || line != "case_id,organ,arch,dsc") {
    throw data_error(dice_path + ": expected header case_id,organ,arch,dsc");
  }
  std::vector<DiceRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    DiceRecord r;
    std::string arch, dsc_text;
    if (!std::getline(is, r.case_id, ',') || !std::getline(is, r.organ, ',') ||
        !std::getline(is, arch, ',') || !std::getline(is, dsc_text)) {
      throw data_error(dice_path + ": line " + std::to_string(line_no) + ": bad record");
    }
    if (arch == "rank2") r.rank = 2;
    else if (arch == "rank3") r.rank = 3;
    else throw data_error(dice_path + ": line " + std::to_string(line_no) + ": bad arch \"" + arch + "\"");
    r.dsc = std::stod(dsc_text);
    records.push_back(std::move(r));
  }

  std::vector<ResourceRecord> resources;
  const std::string perf_path = (std::filesystem::path(dir) / "perf.csv").string();
  if (std::ifstream perf(perf_path); perf) {
    std::getline(perf, line);  // header
    while (std::getline(perf, line)) {
      if (line.empty()) continue;
      std::istringstream is(line);
      ResourceRecord r;
      std::string arch, phase, mib, secs;
      if (!std::getline(is, r.organ, ',') || !std::getline(is, arch, ',') ||
          !std::getline(is, phase, ',') || !std::getline(is, mib, ',') ||
          !std::getline(is, secs)) {
        continue;
      }
      r.rank = arch == "rank3" ? 3 : 2;
      r.phase = phase == "training" ? Phase::training : Phase::application;
      r.peak_memory_mib = std::stod(mib);
      r.wall_time_seconds = std::stod(secs);
      resources.push_back(std::move(r));
    }
  }

  const std::vector<PairedTestResult> tests = paired_tests_by_organ(records);
  ComparisonReport report = render_comparison(records, tests, resources);
  write_report_files(report, dir);
  return report;
}

}  // namespace voxelbench
