#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>

#include "voxelbench/phantom.hpp"
#include "voxelbench/pipeline.hpp"

namespace vb = voxelbench;

namespace {

void print_box(const std::string& id, const vb::BoundingBoxMM& b) {
  std::printf("%s left %.3f right %.3f anterior %.3f posterior %.3f head %.3f foot %.3f\n",
              id.c_str(), b.left, b.right, b.anterior, b.posterior, b.head, b.foot);
}

vb::PhantomSpec spec_from_arg(const std::string& arg) {
  if (arg == "easy") return vb::default_phantom_spec(vb::Difficulty::easy);
  if (arg == "hard") return vb::default_phantom_spec(vb::Difficulty::hard);
  return vb::load_phantom_spec(arg);
}

vb::Grid<float> preprocess_intensity(const vb::AnyGrid& raw, double resample_mm) {
  const vb::Grid<float> rai = vb::reorient_to_rai(vb::as_intensity(raw));
  return resample_mm > 0.0 ? vb::resample_isotropic(rai, resample_mm, vb::Interp::trilinear)
                           : rai;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxelbench: two-stage organ segmentation benchmark (box localization + U-Net)"};
  app.require_subcommand(1);
  std::function<void()> action;

  // phantom-gen -------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("phantom-gen", "generate a synthetic phantom dataset");
    auto spec = std::make_shared<std::string>("easy");
    auto n = std::make_shared<int>(10);
    auto seed = std::make_shared<std::uint64_t>(1);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--spec", *spec, "phantom spec file, or the builtin 'easy'/'hard'");
    cmd->add_option("--n", *n, "number of cases")->required();
    cmd->add_option("--seed", *seed, "master seed");
    cmd->add_option("--out", *out, "output directory")->required();
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::DatasetManifest m = vb::generate_dataset(spec_from_arg(*spec), *n, *seed, *out);
        std::printf("wrote %zu cases under %s\n", m.cases.size(), out->c_str());
      };
    });
  }

  // preprocess ---------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("preprocess", "reorient to RAI and resample isotropically");
    auto manifest = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto mm = std::make_shared<double>(2.0);
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--out", *out, "output directory")->required();
    cmd->add_option("--resample", *mm, "isotropic target spacing [mm]");
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::DatasetManifest m = vb::load_manifest(*manifest);
        std::filesystem::create_directories(*out);
        vb::DatasetManifest m_out;
        m_out.root_dir = *out;
        for (const auto& mc : m.cases) {
          const vb::LoadedCase lc = vb::load_preprocessed_case(mc, *mm);
          vb::ManifestCase nc = mc;
          nc.intensity_path =
              (std::filesystem::path(*out) / (mc.case_id + "_img.vbr")).string();
          nc.label_path = (std::filesystem::path(*out) / (mc.case_id + "_lbl.vbr")).string();
          vb::write_volume(lc.intensity, nc.intensity_path);
          vb::write_volume(lc.labels, nc.label_path);
          m_out.cases.push_back(std::move(nc));
        }
        vb::save_manifest(m_out, (std::filesystem::path(*out) / "manifest.txt").string());
        std::printf("preprocessed %zu cases into %s\n", m_out.cases.size(), out->c_str());
      };
    });
  }

  // extract-bb ----------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("extract-bb", "ground-truth organ bounding boxes");
    auto manifest = std::make_shared<std::string>();
    auto organ = std::make_shared<std::string>();
    auto mm = std::make_shared<double>(2.0);
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--organ", *organ)->required();
    cmd->add_option("--resample", *mm, "spacing of the reported frame; 0 keeps native");
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::DatasetManifest m = vb::load_manifest(*manifest);
        for (const auto& mc : m.cases) {
          const int label = mc.organ_label_map.count(*organ) ? mc.organ_label_map.at(*organ) : 0;
          if (label <= 0) {
            throw vb::data_error("case \"" + mc.case_id + "\" does not list organ \"" + *organ +
                                 "\"");
          }
          vb::LabelMask labels = vb::reorient_to_rai(vb::as_labels(vb::read_volume(mc.label_path)));
          if (*mm > 0.0) labels = vb::resample_isotropic(labels, *mm, vb::Interp::nearest);
          print_box(mc.case_id, vb::extract_gt_bbox(labels, label, mc.case_id));
        }
      };
    });
  }

  // train-rrf ------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("train-rrf", "train the box-localization forest");
    auto manifest = std::make_shared<std::string>();
    auto organ = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto hyper = std::make_shared<vb::ForestHyper>();
    auto mm = std::make_shared<double>(2.0);
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--organ", *organ)->required();
    cmd->add_option("--out", *out, "forest model file")->required();
    cmd->add_option("--trees", hyper->tree_count);
    cmd->add_option("--max-depth", hyper->max_depth);
    cmd->add_option("--min-leaf", hyper->min_leaf);
    cmd->add_option("--seed", hyper->seed);
    cmd->add_option("--resample", *mm);
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::DatasetManifest m = vb::load_manifest(*manifest);
        std::vector<vb::LoadedCase> cases;
        for (const auto& mc : m.cases) cases.push_back(vb::load_preprocessed_case(mc, *mm));
        std::vector<vb::TrainingCase> tc;
        for (const auto& lc : cases) {
          tc.push_back({&lc.intensity,
                        vb::extract_gt_bbox(lc.labels, lc.organ_labels.at(*organ), lc.id)});
        }
        const vb::Forest forest = vb::train_forest(tc, *organ, *hyper);
        vb::save_forest(forest, *out);
        std::printf("trained %d trees on %zu cases -> %s\n", hyper->tree_count, tc.size(),
                    out->c_str());
      };
    });
  }

  // detect-voi -------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("detect-voi", "predict an organ VOI with a trained forest");
    auto model = std::make_shared<std::string>();
    auto case_path = std::make_shared<std::string>();
    auto mm = std::make_shared<double>(2.0);
    cmd->add_option("--model", *model)->required();
    cmd->add_option("--case", *case_path, "intensity volume file")->required();
    cmd->add_option("--resample", *mm);
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::Forest forest = vb::load_forest(*model);
        const vb::Grid<float> vol = preprocess_intensity(vb::read_volume(*case_path), *mm);
        const vb::BoxPrediction pred = vb::predict_bbox(forest, vol);
        print_box(forest.organ, pred.box);
        std::printf("spread %.3f %.3f %.3f %.3f %.3f %.3f votes %lld\n", pred.spread[0],
                    pred.spread[1], pred.spread[2], pred.spread[3], pred.spread[4],
                    pred.spread[5], static_cast<long long>(pred.vote_count));
        if (!pred.ordered()) {
          std::printf("warning: wall ordering violated on axes%s%s%s\n",
                      pred.axis_ordered[0] ? "" : " x", pred.axis_ordered[1] ? "" : " y",
                      pred.axis_ordered[2] ? "" : " z");
        }
      };
    });
  }

  // train-unet ----------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("train-unet", "train one organ's segmentation network");
    auto rank = std::make_shared<int>(3);
    auto organ = std::make_shared<std::string>();
    auto manifest = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto extent = std::make_shared<int>(96);
    auto depth = std::make_shared<int>(4);
    auto base = std::make_shared<int>(8);
    auto epochs = std::make_shared<int>(100);
    auto batch = std::make_shared<int>(8);
    auto lr = std::make_shared<double>(1e-3);
    auto seed = std::make_shared<std::uint64_t>(1);
    auto mm = std::make_shared<double>(2.0);
    cmd->add_option("--rank", *rank, "2 or 3")->required()->check(CLI::IsMember({2, 3}));
    cmd->add_option("--organ", *organ)->required();
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--out", *out, "model file")->required();
    cmd->add_option("--extent", *extent, "VOI lattice extent");
    cmd->add_option("--depth", *depth);
    cmd->add_option("--base-channels", *base);
    cmd->add_option("--epochs", *epochs);
    cmd->add_option("--batch-size", *batch);
    cmd->add_option("--lr", *lr);
    cmd->add_option("--seed", *seed);
    cmd->add_option("--resample", *mm);
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::DatasetManifest m = vb::load_manifest(*manifest);
        std::vector<vb::VoiPatch> patches;
        for (const auto& mc : m.cases) {
          const vb::LoadedCase lc = vb::load_preprocessed_case(mc, *mm);
          const int label = lc.organ_labels.at(*organ);
          patches.push_back(vb::crop_resample_voi(lc.intensity,
                                                  vb::extract_gt_bbox(lc.labels, label, lc.id),
                                                  *extent, &lc.labels, label, lc.id));
        }
        vb::UNetConfig uc;
        uc.rank = *rank;
        uc.depth = *depth;
        uc.base_channels = *base;
        uc.input_extent = *extent;
        vb::TrainConfig tc;
        tc.batch_size = *batch;
        tc.epochs = *epochs;
        tc.seed = *seed;
        tc.learning_rate = *lr;
        const auto outcome = vb::train_unet<float>(uc, patches, tc);
        vb::save_model(outcome.model, *out);
        std::printf("trained rank-%d model on %zu patches, final loss %.6f -> %s\n", *rank,
                    patches.size(), outcome.loss_history.back(), out->c_str());
      };
    });
  }

  // segment ---------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("segment", "apply a trained model to one case");
    auto model_path = std::make_shared<std::string>();
    auto case_path = std::make_shared<std::string>();
    auto theta = std::make_shared<double>(0.5);
    auto box_vals = std::make_shared<std::vector<double>>();
    auto rrf_model = std::make_shared<std::string>();
    auto labels_path = std::make_shared<std::string>();
    auto organ_label = std::make_shared<int>(1);
    auto out = std::make_shared<std::string>();
    auto mm = std::make_shared<double>(2.0);
    cmd->add_option("--model", *model_path)->required();
    cmd->add_option("--case", *case_path, "intensity volume file")->required();
    cmd->add_option("--threshold", *theta, "foreground probability threshold");
    cmd->add_option("--box", *box_vals, "six walls: left right anterior posterior head foot")
        ->expected(6);
    cmd->add_option("--rrf-model", *rrf_model, "forest file for VOI detection");
    cmd->add_option("--labels", *labels_path, "reference labels for DSC");
    cmd->add_option("--organ-label", *organ_label, "label value in --labels");
    cmd->add_option("--out", *out, "output mask file");
    cmd->add_option("--resample", *mm);
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::AnyUNetModel model = vb::load_model_any(*model_path);
        const vb::AnyGrid raw = vb::read_volume(*case_path);
        const vb::Grid<float> prep = preprocess_intensity(raw, *mm);

        vb::LabelMask fullres_labels;
        vb::LabelMask prep_labels;
        const bool have_labels = !labels_path->empty();
        if (have_labels) {
          fullres_labels = vb::reorient_to_rai(vb::as_labels(vb::read_volume(*labels_path)));
          prep_labels = *mm > 0.0
                            ? vb::resample_isotropic(fullres_labels, *mm, vb::Interp::nearest)
                            : fullres_labels;
        }

        vb::BoundingBoxMM box;
        if (!box_vals->empty()) {
          box = vb::BoundingBoxMM{(*box_vals)[0], (*box_vals)[1], (*box_vals)[2],
                                  (*box_vals)[3], (*box_vals)[4], (*box_vals)[5]};
        } else if (!rrf_model->empty()) {
          const vb::BoxPrediction pred = vb::predict_bbox(vb::load_forest(*rrf_model), prep);
          if (!pred.ordered()) {
            throw vb::data_error("detected VOI has unordered walls; pass --box explicitly");
          }
          box = pred.box;
        } else if (have_labels) {
          box = vb::extract_gt_bbox(prep_labels, *organ_label, *case_path);
        } else {
          throw vb::usage_error("segment needs --box, --rrf-model, or --labels to place the VOI");
        }

        const vb::GridGeometry target =
            have_labels ? fullres_labels.geom
                        : vb::reorient_to_rai(vb::as_intensity(raw)).geom;
        const vb::ApplyResult res =
            vb::apply_model(model, prep, box, *theta, target,
                            have_labels ? &fullres_labels : nullptr, *organ_label);
        if (!out->empty()) vb::write_volume(res.mask, *out);
        if (res.dsc >= 0.0) std::printf("dsc %.6f\n", res.dsc);
        std::printf("application %.3f s, %.1f MiB peak\n", res.seconds, res.peak_mib);
      };
    });
  }

  // crossval ---------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("crossval", "two-architecture cross-validation");
    auto config_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--config", *config_path)->required();
    cmd->add_option("--out", *out, "override the configured output directory");
    cmd->callback([=, &action]() {
      action = [=]() {
        vb::ExperimentConfig cfg = vb::parse_experiment_config(*config_path);
        if (!out->empty()) cfg.out_dir = *out;
        const vb::CrossvalOutcome outcome = vb::run_crossval(cfg);
        std::fputs(outcome.report.quality_table.c_str(), stdout);
        std::fputs("\n", stdout);
        std::fputs(outcome.report.perf_table.c_str(), stdout);
        std::printf("\n%zu dice records -> %s\n", outcome.records.size(), cfg.out_dir.c_str());
      };
    });
  }

  // report ----------------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("report", "re-render tables from dice.csv/perf.csv");
    auto dir = std::make_shared<std::string>();
    cmd->add_option("--in", *dir, "directory with dice.csv")->required();
    cmd->callback([=, &action]() {
      action = [=]() {
        const vb::ComparisonReport report = vb::rebuild_report(*dir);
        std::fputs(report.quality_table.c_str(), stdout);
        std::fputs("\n", stdout);
        std::fputs(report.perf_table.c_str(), stdout);
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    action();
  } catch (const vb::usage_error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const vb::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
