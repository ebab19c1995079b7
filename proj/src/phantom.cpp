#include "voxelbench/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxelbench/rng.hpp"

namespace voxelbench {

namespace {

constexpr const char* kSpecMagic = "voxelbench-phantom-1";

std::string fmt_d(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct RenderedEllipsoid {
  Vector3d center;
  Vector3d semi;
  double intensity = 0.0;
  int label = 0;  // 0 for distractors
};

}  // namespace

void PhantomSpec::validate() const {
  if (volume_dims.minCoeff() < 8) {
    throw data_error("phantom volume dims must be >= 8 per axis");
  }
  if (!(spacing > 0.0)) {
    throw data_error("phantom spacing must be > 0");
  }
  if (organs.empty()) {
    throw data_error("phantom spec lists no organs");
  }
  for (const auto& o : organs) {
    if (o.label <= 0) {
      throw data_error("organ \"" + o.name + "\" needs a positive label");
    }
    for (int a = 0; a < 3; ++a) {
      if (!(o.semi_axes_min[a] > 0.0) || o.semi_axes_min[a] > o.semi_axes_max[a]) {
        throw data_error("organ \"" + o.name + "\" has bad semi-axis range on axis " +
                         std::to_string(a));
      }
      const double reach = o.semi_axes_max[a] + o.center_jitter + global_jitter;
      const double hi = (volume_dims[a] - 1) * spacing;
      if (o.center[a] - reach < 0.0 || o.center[a] + reach > hi) {
        throw data_error("organ \"" + o.name + "\" cannot fit: axis " + std::to_string(a) +
                         " reach [" + fmt_d(o.center[a] - reach) + ", " +
                         fmt_d(o.center[a] + reach) + "] exceeds [0, " + fmt_d(hi) + "] mm");
      }
    }
  }
}

std::map<std::string, int> PhantomSpec::organ_label_map() const {
  std::map<std::string, int> m;
  for (const auto& o : organs) m[o.name] = o.label;
  return m;
}

PhantomSpec default_phantom_spec(Difficulty difficulty) {
  PhantomSpec spec;
  spec.difficulty = difficulty;
  spec.noise_std = difficulty == Difficulty::easy ? 8.0 : 24.0;

  auto organ = [](const std::string& name, int label, Vector3d c, Vector3d smin, Vector3d smax,
                  double jitter, double mean) {
    PhantomOrganSpec o;
    o.name = name;
    o.label = label;
    o.center = c;
    o.semi_axes_min = smin;
    o.semi_axes_max = smax;
    o.center_jitter = jitter;
    o.intensity_mean = mean;
    o.intensity_std = 5.0;
    return o;
  };
  spec.global_jitter = 5.0;
  spec.organs = {
      organ("liver", 1, {42, 46, 38}, {20, 16, 16}, {25, 20, 20}, 2.0, 115.0),
      organ("kidney_left", 2, {30, 92, 90}, {8, 8, 10}, {11, 11, 14}, 2.0, 150.0),
      organ("kidney_right", 3, {98, 92, 90}, {8, 8, 10}, {11, 11, 14}, 2.0, 150.0),
      organ("spleen", 4, {100, 40, 38}, {10, 11, 10}, {13, 15, 14}, 2.0, 90.0),
      organ("pancreas", 5, {64, 90, 58}, {16, 7, 7}, {21, 9, 9}, 2.0, 70.0),
  };

  // Context the localizer can anchor on: a soft-tissue body inside air, a
  // bone-like spine, and an air pocket breaking the z symmetry.
  spec.body_envelope = true;
  spec.body_center = Vector3d(63, 63, 63);
  spec.body_semi_axes = Vector3d(60, 58, 68);
  spec.air_intensity = -1000.0;
  spec.landmarks = {
      {{63, 100, 63}, {9, 9, 70}, 320.0},   // spine column
      {{26, 30, 20}, {16, 14, 14}, -820.0},  // lung-like air pocket
      {{100, 30, 20}, {16, 14, 14}, -820.0},
  };
  return spec;
}

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t seed,
                          const std::string& case_id) {
  spec.validate();
  Rng rng(mix_seed(seed, hash_string("phantom-case")));

  // Case-level draws first: the shared scene shift, then per-organ
  // parameters in spec order, then distractors, then voxel noise.
  Vector3d shift = Vector3d::Zero();
  for (int a = 0; a < 3; ++a) {
    shift[a] = rng.uniform(-spec.global_jitter, spec.global_jitter);
  }
  std::vector<RenderedEllipsoid> shapes;
  const bool hard = spec.difficulty == Difficulty::hard;
  for (const auto& o : spec.organs) {
    RenderedEllipsoid e;
    for (int a = 0; a < 3; ++a) {
      e.center[a] = o.center[a] + shift[a] + rng.uniform(-o.center_jitter, o.center_jitter);
    }
    for (int a = 0; a < 3; ++a) {
      e.semi[a] = rng.uniform(o.semi_axes_min[a], o.semi_axes_max[a]);
    }
    e.intensity = rng.normal(o.intensity_mean, o.intensity_std);
    if (hard) {
      // Compress contrast toward the background.
      e.intensity = spec.background_intensity + (e.intensity - spec.background_intensity) * 0.4;
    }
    e.label = o.label;
    shapes.push_back(e);
  }
  if (hard) {
    const double hi0 = (spec.volume_dims[0] - 1) * spec.spacing;
    const double hi1 = (spec.volume_dims[1] - 1) * spec.spacing;
    const double hi2 = (spec.volume_dims[2] - 1) * spec.spacing;
    for (int d = 0; d < 3; ++d) {
      RenderedEllipsoid e;
      e.center = Vector3d(rng.uniform(0.15 * hi0, 0.85 * hi0), rng.uniform(0.15 * hi1, 0.85 * hi1),
                          rng.uniform(0.15 * hi2, 0.85 * hi2));
      e.semi = Vector3d(rng.uniform(5, 10), rng.uniform(5, 10), rng.uniform(5, 10));
      e.intensity = rng.normal(95.0, 25.0);
      e.label = 0;
      shapes.push_back(e);
    }
  }

  PhantomCase out;
  out.case_id = case_id.empty() ? "case" : case_id;
  out.seed = seed;

  GridGeometry geom;
  geom.dims = spec.volume_dims;
  geom.spacing = Vector3d::Constant(spec.spacing);
  geom.origin = Vector3d::Zero();
  geom.orientation = "RAI";
  out.volume = Grid<std::int16_t>(geom);
  out.labels = LabelMask(geom);

  std::int64_t idx = 0;
  for (int k = 0; k < geom.dims[2]; ++k)
    for (int j = 0; j < geom.dims[1]; ++j)
      for (int i = 0; i < geom.dims[0]; ++i, ++idx) {
        const Vector3d p = geom.world(i, j, k);
        double value = spec.background_intensity;
        if (spec.body_envelope &&
            (p - spec.body_center - shift).cwiseQuotient(spec.body_semi_axes).squaredNorm() >
                1.0) {
          value = spec.air_intensity;
        }
        int label = 0;
        bool claimed = false;
        for (const auto& e : shapes) {
          const Vector3d q = (p - e.center).cwiseQuotient(e.semi);
          if (q.squaredNorm() <= 1.0) {
            value = e.intensity;
            label = e.label;
            claimed = true;
            break;  // earlier shapes take priority in overlaps
          }
        }
        if (!claimed) {
          for (const auto& lm : spec.landmarks) {
            const Vector3d q = (p - lm.center - shift).cwiseQuotient(lm.semi_axes);
            if (q.squaredNorm() <= 1.0) {
              value = lm.intensity;
              break;
            }
          }
        }
        value += rng.normal(0.0, spec.noise_std);
        if (value < -32768.0) value = -32768.0;
        if (value > 32767.0) value = 32767.0;
        out.volume.voxels[idx] = static_cast<std::int16_t>(std::llround(value));
        out.labels.voxels[idx] = static_cast<std::uint8_t>(label);
      }

  for (const auto& o : spec.organs) {
    out.gt_boxes[o.name] = extract_gt_bbox(out.labels, o.label, out.case_id);
  }
  return out;
}

DatasetManifest generate_dataset(const PhantomSpec& spec, int n, std::uint64_t seed,
                                 const std::string& out_dir) {
  if (n < 1) {
    throw data_error("dataset size must be >= 1");
  }
  spec.validate();
  std::filesystem::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.root_dir = out_dir;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "c%03d", i);
    const PhantomCase c = generate_case(spec, mix_seed(seed, static_cast<std::uint64_t>(i)), id);
    ManifestCase mc;
    mc.case_id = id;
    mc.intensity_path = (std::filesystem::path(out_dir) / (std::string(id) + "_img.vbr")).string();
    mc.label_path = (std::filesystem::path(out_dir) / (std::string(id) + "_lbl.vbr")).string();
    mc.organ_label_map = spec.organ_label_map();
    write_volume(c.volume, mc.intensity_path);
    write_volume(c.labels, mc.label_path);
    manifest.cases.push_back(std::move(mc));
  }
  const std::string manifest_path =
      (std::filesystem::path(out_dir) / "manifest.txt").string();
  save_manifest(manifest, manifest_path);
  return load_manifest(manifest_path);
}

PhantomSpec load_phantom_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("cannot open phantom spec \"" + path + "\"");
  }
  std::string line;
  if (!std::getline(in, line) || line != kSpecMagic) {
    throw data_error(path + ": line 1: expected \"" + std::string(kSpecMagic) + "\"");
  }
  PhantomSpec spec;
  spec.organs.clear();
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    auto fail = [&](const std::string& what) {
      throw data_error(path + ": line " + std::to_string(line_no) + ": " + what);
    };
    if (key == "dims:") {
      if (!(is >> spec.volume_dims[0] >> spec.volume_dims[1] >> spec.volume_dims[2])) {
        fail("expected three dims");
      }
    } else if (key == "spacing:") {
      if (!(is >> spec.spacing)) fail("expected spacing");
    } else if (key == "background:") {
      if (!(is >> spec.background_intensity)) fail("expected background intensity");
    } else if (key == "noise_std:") {
      if (!(is >> spec.noise_std)) fail("expected noise std");
    } else if (key == "difficulty:") {
      std::string d;
      is >> d;
      if (d == "easy") spec.difficulty = Difficulty::easy;
      else if (d == "hard") spec.difficulty = Difficulty::hard;
      else fail("difficulty must be easy or hard");
    } else if (key == "global_jitter:") {
      if (!(is >> spec.global_jitter)) fail("expected global jitter");
    } else if (key == "body:") {
      spec.body_envelope = true;
      if (!(is >> spec.body_center[0] >> spec.body_center[1] >> spec.body_center[2] >>
            spec.body_semi_axes[0] >> spec.body_semi_axes[1] >> spec.body_semi_axes[2])) {
        fail("expected body: <cx cy cz> <sx sy sz>");
      }
    } else if (key == "air:") {
      if (!(is >> spec.air_intensity)) fail("expected air intensity");
    } else if (key == "landmark") {
      PhantomLandmark lm;
      if (!(is >> lm.center[0] >> lm.center[1] >> lm.center[2] >> lm.semi_axes[0] >>
            lm.semi_axes[1] >> lm.semi_axes[2] >> lm.intensity)) {
        fail("expected landmark <cx cy cz> <sx sy sz> <intensity>");
      }
      spec.landmarks.push_back(lm);
    } else if (key == "organ") {
      PhantomOrganSpec o;
      std::string tag;
      if (!(is >> o.name >> o.label)) fail("expected organ name and label");
      auto triple = [&](const char* name, Vector3d& v) {
        if (!(is >> tag) || tag != name || !(is >> v[0] >> v[1] >> v[2])) {
          fail(std::string("expected ") + name + " <x y z>");
        }
      };
      triple("center", o.center);
      triple("semi_min", o.semi_axes_min);
      triple("semi_max", o.semi_axes_max);
      if (!(is >> tag) || tag != "jitter" || !(is >> o.center_jitter)) fail("expected jitter");
      if (!(is >> tag) || tag != "intensity" || !(is >> o.intensity_mean >> o.intensity_std)) {
        fail("expected intensity <mean> <std>");
      }
      spec.organs.push_back(std::move(o));
    } else {
      fail("unknown key \"" + key + "\"");
    }
  }
  spec.validate();
  return spec;
}

void save_phantom_spec(const PhantomSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open \"" + path + "\" for writing");
  }
  out << kSpecMagic << "\n";
  out << "dims: " << spec.volume_dims[0] << " " << spec.volume_dims[1] << " "
      << spec.volume_dims[2] << "\n";
  out << "spacing: " << fmt_d(spec.spacing) << "\n";
  out << "background: " << fmt_d(spec.background_intensity) << "\n";
  out << "noise_std: " << fmt_d(spec.noise_std) << "\n";
  out << "difficulty: " << (spec.difficulty == Difficulty::easy ? "easy" : "hard") << "\n";
  out << "global_jitter: " << fmt_d(spec.global_jitter) << "\n";
  if (spec.body_envelope) {
    out << "body: " << fmt_d(spec.body_center[0]) << " " << fmt_d(spec.body_center[1]) << " "
        << fmt_d(spec.body_center[2]) << " " << fmt_d(spec.body_semi_axes[0]) << " "
        << fmt_d(spec.body_semi_axes[1]) << " " << fmt_d(spec.body_semi_axes[2]) << "\n";
    out << "air: " << fmt_d(spec.air_intensity) << "\n";
  }
  for (const auto& lm : spec.landmarks) {
    out << "landmark " << fmt_d(lm.center[0]) << " " << fmt_d(lm.center[1]) << " "
        << fmt_d(lm.center[2]) << " " << fmt_d(lm.semi_axes[0]) << " " << fmt_d(lm.semi_axes[1])
        << " " << fmt_d(lm.semi_axes[2]) << " " << fmt_d(lm.intensity) << "\n";
  }
  for (const auto& o : spec.organs) {
    out << "organ " << o.name << " " << o.label << " center " << fmt_d(o.center[0]) << " "
        << fmt_d(o.center[1]) << " " << fmt_d(o.center[2]) << " semi_min "
        << fmt_d(o.semi_axes_min[0]) << " " << fmt_d(o.semi_axes_min[1]) << " "
        << fmt_d(o.semi_axes_min[2]) << " semi_max " << fmt_d(o.semi_axes_max[0]) << " "
        << fmt_d(o.semi_axes_max[1]) << " " << fmt_d(o.semi_axes_max[2]) << " jitter "
        << fmt_d(o.center_jitter) << " intensity " << fmt_d(o.intensity_mean) << " "
        << fmt_d(o.intensity_std) << "\n";
  }
}

}  // namespace voxelbench
