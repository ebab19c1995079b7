#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>

#include "voxelbench/error.hpp"

namespace voxelbench {

using Vector3i = Eigen::Vector3i;
using Vector3d = Eigen::Vector3d;
using Vector6d = Eigen::Matrix<double, 6, 1>;

template <typename T>
using ArrayX = Eigen::Array<T, Eigen::Dynamic, 1>;

// Voxel lattice geometry: dims, mm spacing, mm origin, axis-code orientation.
// Voxel (i,j,k) has its center at origin + spacing .* (i,j,k).
struct GridGeometry {
  Vector3i dims{0, 0, 0};
  Vector3d spacing{1.0, 1.0, 1.0};
  Vector3d origin{0.0, 0.0, 0.0};
  std::string orientation = "RAI";

  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }

  Vector3d world(int i, int j, int k) const {
    return origin + spacing.cwiseProduct(Vector3d(i, j, k));
  }

  void validate() const {
    if (dims.minCoeff() < 1) {
      std::ostringstream os;
      os << "grid dims must all be >= 1, got " << dims.transpose();
      throw data_error(os.str());
    }
    if (spacing.minCoeff() <= 0.0) {
      std::ostringstream os;
      os << "grid spacing must be > 0, got " << spacing.transpose();
      throw data_error(os.str());
    }
  }

  bool congruent(const GridGeometry& other, double tol = 1e-6) const {
    return dims == other.dims && orientation == other.orientation &&
           (spacing - other.spacing).cwiseAbs().maxCoeff() <= tol &&
           (origin - other.origin).cwiseAbs().maxCoeff() <= tol;
  }
};

// Dense scalar raster over a GridGeometry, x-fastest storage.
template <typename T>
struct Grid {
  GridGeometry geom;
  ArrayX<T> voxels;

  Grid() = default;
  explicit Grid(const GridGeometry& g) : geom(g), voxels(ArrayX<T>::Zero(g.voxel_count())) {}

  std::int64_t index(int i, int j, int k) const {
    return i + static_cast<std::int64_t>(geom.dims[0]) * (j + static_cast<std::int64_t>(geom.dims[1]) * k);
  }

  T& at(int i, int j, int k) { return voxels[index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return voxels[index(i, j, k)]; }

  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < geom.dims[0] && j < geom.dims[1] && k < geom.dims[2];
  }

  void validate() const {
    geom.validate();
    if (voxels.size() != geom.voxel_count()) {
      std::ostringstream os;
      os << "voxel buffer holds " << voxels.size() << " values, geometry expects "
         << geom.voxel_count();
      throw data_error(os.str());
    }
  }
};

using LabelMask = Grid<std::uint8_t>;

template <typename From>
Grid<float> to_float(const Grid<From>& g) {
  Grid<float> out;
  out.geom = g.geom;
  out.voxels = g.voxels.template cast<float>();
  return out;
}

// Six organ-wall coordinates in mm. The min walls along x, y, z are named
// left, anterior, head; the max walls right, posterior, foot.
struct BoundingBoxMM {
  double left = 0.0, right = 0.0;
  double anterior = 0.0, posterior = 0.0;
  double head = 0.0, foot = 0.0;

  Vector6d as_vector() const {
    Vector6d v;
    v << left, right, anterior, posterior, head, foot;
    return v;
  }

  static BoundingBoxMM from_vector(const Vector6d& v) {
    return BoundingBoxMM{v[0], v[1], v[2], v[3], v[4], v[5]};
  }

  double min_wall(int axis) const {
    return axis == 0 ? left : axis == 1 ? anterior : head;
  }
  double max_wall(int axis) const {
    return axis == 0 ? right : axis == 1 ? posterior : foot;
  }

  double extent(int axis) const { return max_wall(axis) - min_wall(axis); }

  bool ordered() const {
    return left <= right && anterior <= posterior && head <= foot;
  }

  double volume() const {
    if (!ordered()) return 0.0;
    return extent(0) * extent(1) * extent(2);
  }
};

// Fixed-lattice cube cut out of a volume: extent^3 intensities, optional
// binary labels, plus provenance (source box and case).
struct VoiPatch {
  int extent = 96;
  ArrayX<float> intensities;
  ArrayX<std::uint8_t> labels;  // empty, or extent^3 values in {0,1}
  BoundingBoxMM source_box;
  std::string source_case;

  bool has_labels() const { return labels.size() > 0; }

  std::int64_t index(int i, int j, int k) const {
    return i + static_cast<std::int64_t>(extent) * (j + static_cast<std::int64_t>(extent) * k);
  }

  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(extent) * extent * extent;
  }
};

// ---------------------------------------------------------------------------
// Orientation codes
//
// A code is three letters, one drawn from each pair {R,L}, {A,P}, {I,S}, in
// any axis order; letter k describes which canonical semi-axis voxel axis k
// grows toward (R:+x, L:-x, A:+y, P:-y, I:+z, S:-z). "RAI" is the canonical
// frame: in it the min walls along x, y, z carry the names left, anterior,
// head. 3! permutations x 2^3 signs = 48 valid codes.
// ---------------------------------------------------------------------------

struct AxisMap {
  std::array<int, 3> axis{};  // canonical axis targeted by each volume axis
  std::array<int, 3> sign{};  // +1 or -1 along that canonical axis
};

inline AxisMap parse_orientation(const std::string& code) {
  if (code.size() != 3) {
    throw data_error("unknown orientation code \"" + code + "\" (need 3 letters)");
  }
  AxisMap m;
  bool seen[3] = {false, false, false};
  for (int k = 0; k < 3; ++k) {
    int axis;
    int sign;
    switch (code[k]) {
      case 'R': axis = 0; sign = +1; break;
      case 'L': axis = 0; sign = -1; break;
      case 'A': axis = 1; sign = +1; break;
      case 'P': axis = 1; sign = -1; break;
      case 'I': axis = 2; sign = +1; break;
      case 'S': axis = 2; sign = -1; break;
      default:
        throw data_error("unknown orientation code \"" + code + "\" (bad letter '" +
                         std::string(1, code[k]) + "')");
    }
    if (seen[axis]) {
      throw data_error("unknown orientation code \"" + code + "\" (axis repeated)");
    }
    seen[axis] = true;
    m.axis[k] = axis;
    m.sign[k] = sign;
  }
  return m;
}

inline const std::array<std::string, 48>& all_orientation_codes() {
  static const std::array<std::string, 48> codes = [] {
    std::array<std::string, 48> out{};
    const char* pairs[3][2] = {{"R", "L"}, {"A", "P"}, {"I", "S"}};
    int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    int n = 0;
    for (auto& perm : perms)
      for (int s0 = 0; s0 < 2; ++s0)
        for (int s1 = 0; s1 < 2; ++s1)
          for (int s2 = 0; s2 < 2; ++s2) {
            int sel[3] = {s0, s1, s2};
            std::string c;
            for (int k = 0; k < 3; ++k) c += pairs[perm[k]][sel[k]];
            out[n++] = c;
          }
    return out;
  }();
  return codes;
}

// Permute/flip the voxel array from its current orientation into `target`.
// The returned grid has a zeroed origin; the voxel multiset is preserved.
template <typename T>
Grid<T> reorient(const Grid<T>& g, const std::string& target) {
  g.validate();
  const AxisMap src = parse_orientation(g.geom.orientation);
  const AxisMap dst = parse_orientation(target);

  // For each volume axis k of the source, find the target axis m occupying
  // the same canonical axis, flipping when the signs disagree.
  int to_axis[3];
  bool flip[3];
  for (int k = 0; k < 3; ++k) {
    int m = -1;
    for (int j = 0; j < 3; ++j) {
      if (dst.axis[j] == src.axis[k]) m = j;
    }
    to_axis[k] = m;
    flip[k] = src.sign[k] != dst.sign[m];
  }

  Grid<T> out;
  out.geom.orientation = target;
  out.geom.origin = Vector3d::Zero();
  for (int k = 0; k < 3; ++k) {
    out.geom.dims[to_axis[k]] = g.geom.dims[k];
    out.geom.spacing[to_axis[k]] = g.geom.spacing[k];
  }
  out.voxels.resize(g.voxels.size());

  const Vector3i d = g.geom.dims;
  std::int64_t src_idx = 0;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i, ++src_idx) {
        const int v[3] = {i, j, k};
        int u[3];
        for (int a = 0; a < 3; ++a) {
          u[to_axis[a]] = flip[a] ? d[a] - 1 - v[a] : v[a];
        }
        out.voxels[out.index(u[0], u[1], u[2])] = g.voxels[src_idx];
      }
  return out;
}

template <typename T>
Grid<T> reorient_to_rai(const Grid<T>& g) {
  return reorient(g, "RAI");
}

enum class Interp { trilinear, nearest };

namespace detail {

inline double clamp_continuous(double u, int n) {
  if (u < 0.0) return 0.0;
  const double hi = static_cast<double>(n - 1);
  return u > hi ? hi : u;
}

// Trilinear sample at continuous index u (already clamped per axis).
template <typename T>
double sample_trilinear(const Grid<T>& g, const Vector3d& u) {
  int i0[3], i1[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double c = clamp_continuous(u[a], g.geom.dims[a]);
    i0[a] = static_cast<int>(std::floor(c));
    if (i0[a] > g.geom.dims[a] - 1) i0[a] = g.geom.dims[a] - 1;
    i1[a] = i0[a] + 1 < g.geom.dims[a] ? i0[a] + 1 : i0[a];
    f[a] = c - i0[a];
  }
  double acc = 0.0;
  for (int cz = 0; cz < 2; ++cz)
    for (int cy = 0; cy < 2; ++cy)
      for (int cx = 0; cx < 2; ++cx) {
        const double w = (cx ? f[0] : 1.0 - f[0]) * (cy ? f[1] : 1.0 - f[1]) *
                         (cz ? f[2] : 1.0 - f[2]);
        if (w == 0.0) continue;
        acc += w * static_cast<double>(g.at(cx ? i1[0] : i0[0], cy ? i1[1] : i0[1],
                                            cz ? i1[2] : i0[2]));
      }
  return acc;
}

template <typename T>
T sample_nearest(const Grid<T>& g, const Vector3d& u) {
  int idx[3];
  for (int a = 0; a < 3; ++a) {
    const double c = clamp_continuous(u[a], g.geom.dims[a]);
    idx[a] = static_cast<int>(std::floor(c + 0.5));
    if (idx[a] > g.geom.dims[a] - 1) idx[a] = g.geom.dims[a] - 1;
  }
  return g.at(idx[0], idx[1], idx[2]);
}

}  // namespace detail

// Resample onto an isotropic lattice of `target` mm. Output dims are
// ceil(dim * spacing / target); every output voxel is sampled at its own
// world-space center, clamping out-of-domain positions to the edge voxel.
template <typename T>
Grid<T> resample_isotropic(const Grid<T>& g, double target = 2.0,
                           Interp mode = Interp::trilinear) {
  g.validate();
  if (!(target > 0.0)) {
    throw data_error("resample target spacing must be > 0, got " + std::to_string(target));
  }
  if (mode == Interp::trilinear && !std::is_floating_point_v<T>) {
    throw data_error("trilinear resampling requires float voxels; use nearest for labels");
  }

  Grid<T> out;
  out.geom.orientation = g.geom.orientation;
  out.geom.origin = g.geom.origin;
  out.geom.spacing = Vector3d::Constant(target);
  for (int a = 0; a < 3; ++a) {
    out.geom.dims[a] = static_cast<int>(
        std::ceil(static_cast<double>(g.geom.dims[a]) * g.geom.spacing[a] / target));
    if (out.geom.dims[a] < 1) out.geom.dims[a] = 1;
  }
  out.voxels.resize(out.geom.voxel_count());

  std::int64_t w = 0;
  for (int k = 0; k < out.geom.dims[2]; ++k)
    for (int j = 0; j < out.geom.dims[1]; ++j)
      for (int i = 0; i < out.geom.dims[0]; ++i, ++w) {
        Vector3d u;
        for (int a = 0; a < 3; ++a) {
          const int idx = a == 0 ? i : a == 1 ? j : k;
          u[a] = idx * target / g.geom.spacing[a];
        }
        if (mode == Interp::trilinear) {
          out.voxels[w] = static_cast<T>(detail::sample_trilinear(g, u));
        } else {
          out.voxels[w] = detail::sample_nearest(g, u);
        }
      }
  return out;
}

// World-space voxel-center extremes of all voxels equal to organ_label.
inline BoundingBoxMM extract_gt_bbox(const LabelMask& labels, int organ_label,
                                     const std::string& case_id = {}) {
  labels.validate();
  if (organ_label <= 0) {
    throw data_error("organ label must be > 0, got " + std::to_string(organ_label));
  }
  Vector3i lo, hi;
  bool found = false;
  std::int64_t idx = 0;
  const Vector3i d = labels.geom.dims;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i, ++idx) {
        if (labels.voxels[idx] != organ_label) continue;
        const Vector3i v(i, j, k);
        if (!found) {
          lo = hi = v;
          found = true;
        } else {
          lo = lo.cwiseMin(v);
          hi = hi.cwiseMax(v);
        }
      }
  if (!found) {
    throw data_error("no voxel carries organ label " + std::to_string(organ_label) +
                     (case_id.empty() ? "" : " in case \"" + case_id + "\""));
  }
  const Vector3d wlo = labels.geom.world(lo[0], lo[1], lo[2]);
  const Vector3d whi = labels.geom.world(hi[0], hi[1], hi[2]);
  return BoundingBoxMM{wlo[0], whi[0], wlo[1], whi[1], wlo[2], whi[2]};
}

// Sample the box content onto an extent^3 lattice spanning wall-to-wall on
// each axis (anisotropic stretch). Intensities are trilinear; labels nearest,
// then binarized against organ_label.
inline VoiPatch crop_resample_voi(const Grid<float>& volume, const BoundingBoxMM& box,
                                  int extent = 96, const LabelMask* labels = nullptr,
                                  int organ_label = 0, const std::string& case_id = {}) {
  volume.validate();
  if (!box.ordered()) {
    throw data_error("voi box walls are not ordered");
  }
  for (int a = 0; a < 3; ++a) {
    if (!(box.extent(a) > 0.0)) {
      throw data_error("voi box is degenerate (zero extent on axis " + std::to_string(a) + ")");
    }
  }
  if (extent < 8) {
    throw data_error("voi extent must be >= 8, got " + std::to_string(extent));
  }
  if (labels != nullptr) {
    labels->validate();
    if (!labels->geom.congruent(volume.geom)) {
      throw data_error("label geometry is not congruent with the intensity volume");
    }
    if (organ_label <= 0) {
      throw data_error("organ label must be > 0 when labels are requested");
    }
  }

  VoiPatch patch;
  patch.extent = extent;
  patch.source_box = box;
  patch.source_case = case_id;
  patch.intensities.resize(patch.voxel_count());
  if (labels != nullptr) patch.labels.resize(patch.voxel_count());

  std::int64_t w = 0;
  for (int k = 0; k < extent; ++k)
    for (int j = 0; j < extent; ++j)
      for (int i = 0; i < extent; ++i, ++w) {
        Vector3d u;
        for (int a = 0; a < 3; ++a) {
          const int idx = a == 0 ? i : a == 1 ? j : k;
          const double world =
              box.min_wall(a) + idx * box.extent(a) / static_cast<double>(extent - 1);
          u[a] = (world - volume.geom.origin[a]) / volume.geom.spacing[a];
        }
        patch.intensities[w] = static_cast<float>(detail::sample_trilinear(volume, u));
        if (labels != nullptr) {
          patch.labels[w] = detail::sample_nearest(*labels, u) == organ_label ? 1 : 0;
        }
      }
  return patch;
}

// Nearest-neighbor back-projection of a binary patch into a target geometry.
// Voxels whose centers fall outside the box become background.
inline LabelMask reconstruct_mask(const VoiPatch& patch, const BoundingBoxMM& box,
                                  const GridGeometry& target) {
  target.validate();
  if (!patch.has_labels()) {
    throw data_error("patch carries no label data to reconstruct");
  }
  if (patch.labels.size() != patch.voxel_count()) {
    throw data_error("patch label buffer does not match its extent");
  }
  if ((patch.labels > 1).any()) {
    throw data_error("patch labels must be binary");
  }
  const Vector6d declared = patch.source_box.as_vector();
  if (declared.cwiseAbs().maxCoeff() > 0.0 &&
      (declared - box.as_vector()).cwiseAbs().maxCoeff() > 1e-6) {
    throw data_error("box does not match the patch's declared source box");
  }
  if (!box.ordered()) {
    throw data_error("voi box walls are not ordered");
  }

  LabelMask out(target);
  const double eps = 1e-9;
  std::int64_t w = 0;
  for (int k = 0; k < target.dims[2]; ++k)
    for (int j = 0; j < target.dims[1]; ++j)
      for (int i = 0; i < target.dims[0]; ++i, ++w) {
        const Vector3d p = target.world(i, j, k);
        bool inside = true;
        int idx[3];
        for (int a = 0; a < 3; ++a) {
          if (p[a] < box.min_wall(a) - eps || p[a] > box.max_wall(a) + eps) {
            inside = false;
            break;
          }
          const double span = box.extent(a);
          const double u = span > 0.0
                               ? (p[a] - box.min_wall(a)) / span * (patch.extent - 1)
                               : 0.0;
          idx[a] = static_cast<int>(std::floor(u + 0.5));
          if (idx[a] < 0) idx[a] = 0;
          if (idx[a] > patch.extent - 1) idx[a] = patch.extent - 1;
        }
        if (inside) {
          out.voxels[w] = patch.labels[patch.index(idx[0], idx[1], idx[2])];
        }
      }
  return out;
}

}  // namespace voxelbench
