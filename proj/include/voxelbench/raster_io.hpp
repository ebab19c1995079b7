#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "voxelbench/grid.hpp"

namespace voxelbench {

enum class ElementType { int16, uint8, float32 };

const char* element_type_name(ElementType t);
ElementType parse_element_type(const std::string& name);

// Parsed header of a voxelbench-raster-1 file. Endianness is always little,
// encoding always attached raw payload.
struct GridHeader {
  int dimension = 3;
  Vector3i sizes{0, 0, 0};
  Vector3d spacings{1.0, 1.0, 1.0};
  Vector3d origin{0.0, 0.0, 0.0};
  ElementType element_type = ElementType::float32;
  std::string orientation_code = "RAI";

  GridGeometry geometry() const;
  std::size_t element_size() const;
  std::int64_t payload_bytes() const;
};

using AnyGrid = std::variant<Grid<std::int16_t>, Grid<std::uint8_t>, Grid<float>>;

AnyGrid read_volume(const std::string& path);

void write_volume(const Grid<std::int16_t>& v, const std::string& path);
void write_volume(const Grid<std::uint8_t>& v, const std::string& path);
void write_volume(const Grid<float>& v, const std::string& path);

ElementType element_type_of(const AnyGrid& g);
const GridGeometry& geometry_of(const AnyGrid& g);

// Intensity view: int16/float32 accepted, converted to float.
Grid<float> as_intensity(const AnyGrid& g);
// Label view: uint8 only.
LabelMask as_labels(const AnyGrid& g);

extern const std::vector<std::string> kKnownOrgans;

struct ManifestCase {
  std::string case_id;
  std::string intensity_path;  // resolved against root_dir
  std::string label_path;
  std::map<std::string, int> organ_label_map;
};

struct DatasetManifest {
  std::string root_dir;
  std::vector<ManifestCase> cases;

  const ManifestCase& find_case(const std::string& id) const;
};

// Line-oriented manifest: header `voxelbench-manifest-1`, then one
// `case <id> <intensity> <labels> <organ>=<int> ...` line per case.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

std::string resolve_path(const std::string& root_dir, const std::string& rel);

// Congruence check between an intensity/label pair; every mismatched field is
// listed in the thrown message.
void validate_case(const GridGeometry& intensity, const GridGeometry& labels,
                   const std::string& case_id = {});

}  // namespace voxelbench
