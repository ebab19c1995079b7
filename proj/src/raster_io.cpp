#include "voxelbench/raster_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace voxelbench {

namespace {

constexpr const char* kRasterMagic = "FORMAT voxelbench-raster-1";
constexpr const char* kManifestMagic = "voxelbench-manifest-1";

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void header_error(const std::string& path, int line_no, const std::string& what) {
  throw data_error(path + ": header line " + std::to_string(line_no) + ": " + what);
}

std::string read_header_line(std::istream& in, const std::string& path, int line_no) {
  std::string line;
  if (!std::getline(in, line)) {
    header_error(path, line_no, "unexpected end of file");
  }
  if (!line.empty() && line.back() == '\r') {
    header_error(path, line_no, "carriage return not allowed");
  }
  return line;
}

// Parses "key: a b c" into exactly `count` doubles, no trailing tokens.
void parse_triple(const std::string& line, const std::string& key, double* out, int count,
                  const std::string& path, int line_no) {
  const std::string prefix = key + ":";
  if (line.rfind(prefix, 0) != 0) {
    header_error(path, line_no, "expected \"" + key + ": ...\", got \"" + line + "\"");
  }
  std::istringstream is(line.substr(prefix.size()));
  for (int i = 0; i < count; ++i) {
    if (!(is >> out[i])) {
      header_error(path, line_no, "expected " + std::to_string(count) + " values for " + key);
    }
  }
  std::string rest;
  if (is >> rest) {
    header_error(path, line_no, "trailing token \"" + rest + "\" after " + key);
  }
}

template <typename T>
void encode_le(const ArrayX<T>& voxels, std::vector<unsigned char>& out) {
  out.resize(static_cast<std::size_t>(voxels.size()) * sizeof(T));
  unsigned char* p = out.data();
  for (std::int64_t i = 0; i < voxels.size(); ++i) {
    if constexpr (sizeof(T) == 1) {
      *p++ = static_cast<unsigned char>(voxels[i]);
    } else if constexpr (std::is_same_v<T, std::int16_t>) {
      const auto u = static_cast<std::uint16_t>(voxels[i]);
      *p++ = static_cast<unsigned char>(u & 0xff);
      *p++ = static_cast<unsigned char>(u >> 8);
    } else {
      static_assert(std::is_same_v<T, float>);
      const auto u = std::bit_cast<std::uint32_t>(voxels[i]);
      *p++ = static_cast<unsigned char>(u & 0xff);
      *p++ = static_cast<unsigned char>((u >> 8) & 0xff);
      *p++ = static_cast<unsigned char>((u >> 16) & 0xff);
      *p++ = static_cast<unsigned char>(u >> 24);
    }
  }
}

template <typename T>
void decode_le(const std::vector<unsigned char>& in, ArrayX<T>& voxels, std::int64_t count) {
  voxels.resize(count);
  const unsigned char* p = in.data();
  for (std::int64_t i = 0; i < count; ++i) {
    if constexpr (sizeof(T) == 1) {
      voxels[i] = static_cast<T>(*p++);
    } else if constexpr (std::is_same_v<T, std::int16_t>) {
      std::uint16_t u = static_cast<std::uint16_t>(p[0]) |
                        static_cast<std::uint16_t>(p[1]) << 8;
      p += 2;
      voxels[i] = static_cast<std::int16_t>(u);
    } else {
      static_assert(std::is_same_v<T, float>);
      std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                        static_cast<std::uint32_t>(p[1]) << 8 |
                        static_cast<std::uint32_t>(p[2]) << 16 |
                        static_cast<std::uint32_t>(p[3]) << 24;
      p += 4;
      voxels[i] = std::bit_cast<float>(u);
    }
  }
}

template <typename T>
void write_volume_impl(const Grid<T>& v, const std::string& path, ElementType type) {
  v.validate();
  parse_orientation(v.geom.orientation);

  std::ostringstream header;
  header << kRasterMagic << "\n";
  header << "sizes: " << v.geom.dims[0] << " " << v.geom.dims[1] << " " << v.geom.dims[2]
         << "\n";
  header << "spacings: " << format_double(v.geom.spacing[0]) << " "
         << format_double(v.geom.spacing[1]) << " " << format_double(v.geom.spacing[2]) << "\n";
  header << "origin: " << format_double(v.geom.origin[0]) << " "
         << format_double(v.geom.origin[1]) << " " << format_double(v.geom.origin[2]) << "\n";
  header << "type: " << element_type_name(type) << "\n";
  header << "orientation: " << v.geom.orientation << "\n";
  header << "\n";

  std::vector<unsigned char> payload;
  encode_le(v.voxels, payload);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open \"" + path + "\" for writing");
  }
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) {
    throw std::runtime_error("write failed for \"" + path + "\"");
  }
}

}  // namespace

const char* element_type_name(ElementType t) {
  switch (t) {
    case ElementType::int16: return "int16";
    case ElementType::uint8: return "uint8";
    case ElementType::float32: return "float32";
  }
  throw data_error("invalid element type enumerant");
}

ElementType parse_element_type(const std::string& name) {
  if (name == "int16") return ElementType::int16;
  if (name == "uint8") return ElementType::uint8;
  if (name == "float32") return ElementType::float32;
  throw data_error("unsupported type \"" + name + "\" (expected int16|uint8|float32)");
}

GridGeometry GridHeader::geometry() const {
  GridGeometry g;
  g.dims = sizes;
  g.spacing = spacings;
  g.origin = origin;
  g.orientation = orientation_code;
  return g;
}

std::size_t GridHeader::element_size() const {
  switch (element_type) {
    case ElementType::int16: return 2;
    case ElementType::uint8: return 1;
    case ElementType::float32: return 4;
  }
  throw data_error("invalid element type enumerant");
}

std::int64_t GridHeader::payload_bytes() const {
  return static_cast<std::int64_t>(sizes[0]) * sizes[1] * sizes[2] *
         static_cast<std::int64_t>(element_size());
}

AnyGrid read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw data_error("cannot open \"" + path + "\" for reading");
  }

  GridHeader h;
  int line_no = 1;
  {
    const std::string magic = read_header_line(in, path, line_no);
    if (magic != kRasterMagic) {
      header_error(path, line_no, "expected \"" + std::string(kRasterMagic) + "\"");
    }
  }
  {
    ++line_no;
    double v[3];
    parse_triple(read_header_line(in, path, line_no), "sizes", v, 3, path, line_no);
    for (int a = 0; a < 3; ++a) {
      if (v[a] < 1 || v[a] != std::floor(v[a])) {
        header_error(path, line_no, "sizes must be positive integers");
      }
      h.sizes[a] = static_cast<int>(v[a]);
    }
  }
  {
    ++line_no;
    double v[3];
    parse_triple(read_header_line(in, path, line_no), "spacings", v, 3, path, line_no);
    for (int a = 0; a < 3; ++a) {
      if (!(v[a] > 0.0)) header_error(path, line_no, "spacings must be > 0");
      h.spacings[a] = v[a];
    }
  }
  {
    ++line_no;
    double v[3];
    parse_triple(read_header_line(in, path, line_no), "origin", v, 3, path, line_no);
    for (int a = 0; a < 3; ++a) h.origin[a] = v[a];
  }
  {
    ++line_no;
    const std::string line = read_header_line(in, path, line_no);
    if (line.rfind("type: ", 0) != 0) {
      header_error(path, line_no, "expected \"type: ...\", got \"" + line + "\"");
    }
    h.element_type = parse_element_type(line.substr(6));
  }
  {
    ++line_no;
    const std::string line = read_header_line(in, path, line_no);
    if (line.rfind("orientation: ", 0) != 0) {
      header_error(path, line_no, "expected \"orientation: ...\", got \"" + line + "\"");
    }
    h.orientation_code = line.substr(13);
    parse_orientation(h.orientation_code);
  }
  {
    ++line_no;
    const std::string blank = read_header_line(in, path, line_no);
    if (!blank.empty()) {
      header_error(path, line_no, "expected blank separator line before payload");
    }
  }

  const std::int64_t expected = h.payload_bytes();
  std::vector<unsigned char> payload(static_cast<std::size_t>(expected));
  in.read(reinterpret_cast<char*>(payload.data()), expected);
  const std::int64_t got = in.gcount();
  if (got != expected) {
    throw data_error(path + ": payload size mismatch: expected " + std::to_string(expected) +
                     " bytes, got " + std::to_string(got));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw data_error(path + ": trailing bytes after declared payload of " +
                     std::to_string(expected) + " bytes");
  }

  const std::int64_t count = static_cast<std::int64_t>(h.sizes[0]) * h.sizes[1] * h.sizes[2];
  switch (h.element_type) {
    case ElementType::int16: {
      Grid<std::int16_t> g;
      g.geom = h.geometry();
      decode_le(payload, g.voxels, count);
      return g;
    }
    case ElementType::uint8: {
      Grid<std::uint8_t> g;
      g.geom = h.geometry();
      decode_le(payload, g.voxels, count);
      return g;
    }
    case ElementType::float32: {
      Grid<float> g;
      g.geom = h.geometry();
      decode_le(payload, g.voxels, count);
      return g;
    }
  }
  throw data_error("unreachable element type");
}

void write_volume(const Grid<std::int16_t>& v, const std::string& path) {
  write_volume_impl(v, path, ElementType::int16);
}
void write_volume(const Grid<std::uint8_t>& v, const std::string& path) {
  write_volume_impl(v, path, ElementType::uint8);
}
void write_volume(const Grid<float>& v, const std::string& path) {
  write_volume_impl(v, path, ElementType::float32);
}

ElementType element_type_of(const AnyGrid& g) {
  if (std::holds_alternative<Grid<std::int16_t>>(g)) return ElementType::int16;
  if (std::holds_alternative<Grid<std::uint8_t>>(g)) return ElementType::uint8;
  return ElementType::float32;
}

const GridGeometry& geometry_of(const AnyGrid& g) {
  return std::visit([](const auto& v) -> const GridGeometry& { return v.geom; }, g);
}

Grid<float> as_intensity(const AnyGrid& g) {
  if (const auto* f = std::get_if<Grid<float>>(&g)) return *f;
  if (const auto* s = std::get_if<Grid<std::int16_t>>(&g)) return to_float(*s);
  throw data_error("expected an intensity volume (int16 or float32), got uint8");
}

LabelMask as_labels(const AnyGrid& g) {
  if (const auto* l = std::get_if<LabelMask>(&g)) return *l;
  throw data_error("expected a uint8 label mask, got " +
                   std::string(element_type_name(element_type_of(g))));
}

const std::vector<std::string> kKnownOrgans = {"liver", "kidney_left", "kidney_right",
                                               "spleen", "pancreas"};

const ManifestCase& DatasetManifest::find_case(const std::string& id) const {
  for (const auto& c : cases) {
    if (c.case_id == id) return c;
  }
  throw data_error("case \"" + id + "\" not found in manifest");
}

std::string resolve_path(const std::string& root_dir, const std::string& rel) {
  std::filesystem::path p(rel);
  if (p.is_absolute()) return rel;
  return (std::filesystem::path(root_dir) / p).string();
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw data_error("cannot open manifest \"" + path + "\"");
  }
  DatasetManifest m;
  m.root_dir = std::filesystem::path(path).parent_path().string();
  if (m.root_dir.empty()) m.root_dir = ".";

  std::string line;
  int line_no = 0;
  if (!std::getline(in, line) || line != kManifestMagic) {
    throw data_error(path + ": line 1: expected \"" + std::string(kManifestMagic) + "\"");
  }
  line_no = 1;

  std::set<std::string> seen;
  const std::set<std::string> known(kKnownOrgans.begin(), kKnownOrgans.end());
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag != "case") {
      throw data_error(path + ": line " + std::to_string(line_no) +
                       ": expected \"case ...\", got \"" + line + "\"");
    }
    ManifestCase c;
    std::string ipath, lpath;
    if (!(is >> c.case_id >> ipath >> lpath)) {
      throw data_error(path + ": line " + std::to_string(line_no) +
                       ": expected case id, intensity path, label path");
    }
    if (!seen.insert(c.case_id).second) {
      throw data_error(path + ": line " + std::to_string(line_no) + ": duplicate case id \"" +
                       c.case_id + "\"");
    }
    c.intensity_path = resolve_path(m.root_dir, ipath);
    c.label_path = resolve_path(m.root_dir, lpath);
    std::string pair;
    while (is >> pair) {
      const auto eq = pair.find('=');
      if (eq == std::string::npos) {
        throw data_error(path + ": line " + std::to_string(line_no) +
                         ": expected <organ>=<int>, got \"" + pair + "\"");
      }
      const std::string organ = pair.substr(0, eq);
      if (known.find(organ) == known.end()) {
        throw data_error(path + ": line " + std::to_string(line_no) + ": unknown organ name \"" +
                         organ + "\" in case \"" + c.case_id + "\"");
      }
      int label = 0;
      try {
        label = std::stoi(pair.substr(eq + 1));
      } catch (const std::exception&) {
        throw data_error(path + ": line " + std::to_string(line_no) +
                         ": bad label integer in \"" + pair + "\"");
      }
      c.organ_label_map[organ] = label;
    }
    if (c.organ_label_map.empty()) {
      throw data_error(path + ": line " + std::to_string(line_no) + ": case \"" + c.case_id +
                       "\" lists no organs");
    }
    for (const std::string& p : {c.intensity_path, c.label_path}) {
      if (!std::filesystem::exists(p)) {
        throw data_error(path + ": case \"" + c.case_id + "\" references missing file \"" + p +
                         "\"");
      }
    }
    m.cases.push_back(std::move(c));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open \"" + path + "\" for writing");
  }
  out << kManifestMagic << "\n";
  for (const auto& c : m.cases) {
    out << "case " << c.case_id << " "
        << std::filesystem::path(c.intensity_path).filename().string() << " "
        << std::filesystem::path(c.label_path).filename().string();
    for (const auto& [organ, label] : c.organ_label_map) {
      out << " " << organ << "=" << label;
    }
    out << "\n";
  }
  if (!out) {
    throw std::runtime_error("write failed for \"" + path + "\"");
  }
}

void validate_case(const GridGeometry& intensity, const GridGeometry& labels,
                   const std::string& case_id) {
  constexpr double tol = 1e-6;
  std::ostringstream os;
  bool ok = true;
  if (intensity.dims != labels.dims) {
    os << "  dims mismatch: " << intensity.dims.transpose() << " vs " << labels.dims.transpose()
       << "\n";
    ok = false;
  }
  if ((intensity.spacing - labels.spacing).cwiseAbs().maxCoeff() > tol) {
    os << "  spacing mismatch: " << intensity.spacing.transpose() << " vs "
       << labels.spacing.transpose() << "\n";
    ok = false;
  }
  if ((intensity.origin - labels.origin).cwiseAbs().maxCoeff() > tol) {
    os << "  origin mismatch: " << intensity.origin.transpose() << " vs "
       << labels.origin.transpose() << "\n";
    ok = false;
  }
  if (intensity.orientation != labels.orientation) {
    os << "  orientation mismatch: " << intensity.orientation << " vs " << labels.orientation
       << "\n";
    ok = false;
  }
  if (!ok) {
    throw data_error("intensity/label geometry mismatch" +
                     (case_id.empty() ? std::string() : " in case \"" + case_id + "\"") + ":\n" +
                     os.str());
  }
}

}  // namespace voxelbench
