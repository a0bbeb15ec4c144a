#include "mtmil/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace mtmil {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'F', 'B', 'A', 'G'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFlagCoords = 1u << 0;
constexpr std::uint16_t kFlagTileClass = 1u << 1;
constexpr std::uint16_t kFlagTumorLabel = 1u << 2;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw Error(ErrorCode::FormatError, "truncated bag file");
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = bytes_[pos_] | (std::uint16_t(bytes_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::string stain_origin_name(StainOrigin s) {
  return s == StainOrigin::kExternal ? "external" : "internal";
}

StainOrigin parse_stain_origin(const std::string& s) {
  if (s == "internal") return StainOrigin::kInternal;
  if (s == "external") return StainOrigin::kExternal;
  throw Error(ErrorCode::FormatError, "bad stain_origin value: " + s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string opt_bool_cell(const std::optional<bool>& v) {
  if (!v) return "NA";
  return *v ? "1" : "0";
}

std::optional<bool> parse_opt_bool(const std::string& s) {
  if (s == "NA" || s.empty()) return std::nullopt;
  if (s == "0") return false;
  if (s == "1") return true;
  throw Error(ErrorCode::FormatError, "bad optional boolean cell: " + s);
}

}  // namespace

void FeatureBag::validate() const {
  if (bag_id.empty())
    throw Error(ErrorCode::ValidationError, "empty bag_id");
  if (n_tiles() < 1 || dim() < 1)
    throw Error(ErrorCode::ValidationError,
                "bag " + bag_id + " must have n_tiles >= 1 and dim >= 1");
  if (!features.allFinite())
    throw Error(ErrorCode::ValidationError,
                "bag " + bag_id + " has non-finite features");
  const auto n = static_cast<std::size_t>(n_tiles());
  if (tile_coords && tile_coords->size() != 2 * n)
    throw Error(ErrorCode::ValidationError,
                "bag " + bag_id + " tile_coords length mismatch");
  if (tile_class && tile_class->size() != n)
    throw Error(ErrorCode::ValidationError,
                "bag " + bag_id + " tile_class length mismatch");
  if (tile_class)
    for (const auto c : *tile_class)
      if (c >= kNumTileClasses)
        throw Error(ErrorCode::ValidationError,
                    "bag " + bag_id + " has out-of-range tile_class");
  if (tile_tumor_label && tile_tumor_label->size() != n)
    throw Error(ErrorCode::ValidationError,
                "bag " + bag_id + " tile_tumor_label length mismatch");
  if (tile_tumor_label)
    for (const auto v : *tile_tumor_label)
      if (v > 1)
        throw Error(ErrorCode::ValidationError,
                    "bag " + bag_id + " has non-binary tumor label");
}

void CohortManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& row : rows) {
    if (!seen.insert(row.bag_id).second)
      throw Error(ErrorCode::ValidationError,
                  "duplicate bag_id in manifest: " + row.bag_id);
    if (row.labels.size() != target_ids.size())
      throw Error(ErrorCode::ValidationError,
                  "label count mismatch for bag " + row.bag_id);
    for (const auto v : row.labels)
      if (v != 0 && v != 1 && v != kLabelNA)
        throw Error(ErrorCode::ValidationError,
                    "label outside {0,1,NA} for bag " + row.bag_id);
  }
  std::set<std::string> targets(target_ids.begin(), target_ids.end());
  if (targets.size() != target_ids.size())
    throw Error(ErrorCode::ValidationError, "duplicate target id");
}

const ManifestRow* CohortManifest::find(const std::string& bag_id) const {
  for (const auto& row : rows)
    if (row.bag_id == bag_id) return &row;
  return nullptr;
}

int CohortManifest::target_index(const std::string& target_id) const {
  for (std::size_t i = 0; i < target_ids.size(); ++i)
    if (target_ids[i] == target_id) return static_cast<int>(i);
  return -1;
}

std::vector<std::uint8_t> serialize_bag(const FeatureBag& bag) {
  bag.validate();
  std::vector<std::uint8_t> out;
  const auto n = static_cast<std::uint32_t>(bag.n_tiles());
  const auto d = static_cast<std::uint32_t>(bag.dim());
  out.reserve(16 + std::size_t(n) * d * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  std::uint16_t flags = 0;
  if (bag.tile_coords) flags |= kFlagCoords;
  if (bag.tile_class) flags |= kFlagTileClass;
  if (bag.tile_tumor_label) flags |= kFlagTumorLabel;
  put_u16(out, flags);
  put_u32(out, n);
  put_u32(out, d);
  const std::size_t base = out.size();
  out.resize(base + std::size_t(n) * d * 4);
  std::memcpy(out.data() + base, bag.features.data(), std::size_t(n) * d * 4);
  if (bag.tile_coords)
    for (const auto c : *bag.tile_coords) put_u32(out, c);
  if (bag.tile_class)
    out.insert(out.end(), bag.tile_class->begin(), bag.tile_class->end());
  if (bag.tile_tumor_label)
    out.insert(out.end(), bag.tile_tumor_label->begin(),
               bag.tile_tumor_label->end());
  return out;
}

FeatureBag deserialize_bag(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error(ErrorCode::FormatError, "bad bag magic");
  const auto version = r.u16();
  if (version != kVersion)
    throw Error(ErrorCode::FormatError,
                "unsupported bag version " + std::to_string(version));
  const auto flags = r.u16();
  const auto n = r.u32();
  const auto d = r.u32();
  if (n < 1 || d < 1)
    throw Error(ErrorCode::FormatError, "bag header with empty dimensions");
  FeatureBag bag;
  bag.features.resize(n, d);
  r.raw(bag.features.data(), std::size_t(n) * d * 4);
  if (flags & kFlagCoords) {
    std::vector<std::uint32_t> coords(2 * std::size_t(n));
    for (auto& c : coords) c = r.u32();
    bag.tile_coords = std::move(coords);
  }
  if (flags & kFlagTileClass) {
    std::vector<std::uint8_t> cls(n);
    r.raw(cls.data(), n);
    bag.tile_class = std::move(cls);
  }
  if (flags & kFlagTumorLabel) {
    std::vector<std::uint8_t> lab(n);
    r.raw(lab.data(), n);
    bag.tile_tumor_label = std::move(lab);
  }
  if (r.pos() != r.size())
    throw Error(ErrorCode::FormatError, "trailing bytes in bag file");
  return bag;
}

std::string manifest_to_csv(const CohortManifest& manifest) {
  std::ostringstream out;
  out << "bag_id,cohort_id,timestamp,stain_origin,scanner,tissue_site,"
         "procedure,grade,is_primary_site";
  for (const auto& t : manifest.target_ids) out << ',' << t;
  out << '\n';
  for (const auto& row : manifest.rows) {
    out << row.bag_id << ',' << row.cohort_id << ',' << row.timestamp << ','
        << stain_origin_name(row.stain_origin) << ',' << row.scanner << ','
        << row.tissue_site << ',' << row.procedure << ',';
    if (row.grade_high)
      out << (*row.grade_high ? "high" : "low");
    else
      out << "NA";
    out << ',' << opt_bool_cell(row.is_primary_site);
    for (const auto v : row.labels)
      out << ',' << (v == kLabelNA ? std::string("NA") : std::to_string(int(v)));
    out << '\n';
  }
  return out.str();
}

CohortManifest manifest_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorCode::FormatError, "empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  constexpr int kFixedCols = 9;
  const std::vector<std::string> expected = {
      "bag_id",  "cohort_id",   "timestamp", "stain_origin", "scanner",
      "tissue_site", "procedure", "grade", "is_primary_site"};
  if (header.size() < kFixedCols)
    throw Error(ErrorCode::FormatError, "manifest header too short");
  for (int i = 0; i < kFixedCols; ++i)
    if (header[i] != expected[i])
      throw Error(ErrorCode::FormatError,
                  "manifest header column " + std::to_string(i) +
                      " expected " + expected[i] + " got " + header[i]);
  CohortManifest manifest;
  manifest.target_ids.assign(header.begin() + kFixedCols, header.end());
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorCode::FormatError,
                  "manifest row width mismatch for line: " + line);
    ManifestRow row;
    row.bag_id = cells[0];
    row.cohort_id = cells[1];
    row.timestamp = cells[2];
    row.stain_origin = parse_stain_origin(cells[3]);
    row.scanner = cells[4];
    row.tissue_site = cells[5];
    row.procedure = cells[6];
    if (cells[7] == "NA" || cells[7].empty())
      row.grade_high = std::nullopt;
    else if (cells[7] == "high")
      row.grade_high = true;
    else if (cells[7] == "low")
      row.grade_high = false;
    else
      throw Error(ErrorCode::FormatError, "bad grade cell: " + cells[7]);
    row.is_primary_site = parse_opt_bool(cells[8]);
    for (std::size_t i = kFixedCols; i < cells.size(); ++i) {
      if (cells[i] == "NA")
        row.labels.push_back(kLabelNA);
      else if (cells[i] == "0")
        row.labels.push_back(0);
      else if (cells[i] == "1")
        row.labels.push_back(1);
      else
        throw Error(ErrorCode::FormatError, "bad label cell: " + cells[i]);
    }
    manifest.rows.push_back(std::move(row));
  }
  manifest.validate();
  return manifest;
}

void write_feature_store(const std::vector<FeatureBag>& bags,
                         const CohortManifest& manifest,
                         const std::string& dir) {
  manifest.validate();
  std::set<std::string> bag_ids;
  for (const auto& bag : bags) {
    bag.validate();
    if (!bag_ids.insert(bag.bag_id).second)
      throw Error(ErrorCode::IdMismatch, "duplicate bag_id: " + bag.bag_id);
  }
  std::set<std::string> manifest_ids;
  for (const auto& row : manifest.rows) manifest_ids.insert(row.bag_id);
  if (bag_ids != manifest_ids)
    throw Error(ErrorCode::IdMismatch,
                "bag files and manifest rows disagree on bag_id set");

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::StoreIo, "cannot create " + dir);
  {
    std::ofstream out(fs::path(dir) / "manifest.csv", std::ios::binary);
    if (!out) throw Error(ErrorCode::StoreIo, "cannot write manifest.csv");
    out << manifest_to_csv(manifest);
    if (!out) throw Error(ErrorCode::StoreIo, "manifest write failed");
  }
  for (const auto& bag : bags) {
    const auto bytes = serialize_bag(bag);
    std::ofstream out(fs::path(dir) / (bag.bag_id + ".fbag"),
                      std::ios::binary);
    if (!out)
      throw Error(ErrorCode::StoreIo, "cannot write bag file " + bag.bag_id);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw Error(ErrorCode::StoreIo, "bag write failed for " + bag.bag_id);
  }
}

std::pair<std::vector<FeatureBag>, CohortManifest> read_feature_store(
    const std::string& dir) {
  std::ifstream min(fs::path(dir) / "manifest.csv", std::ios::binary);
  if (!min) throw Error(ErrorCode::StoreIo, "missing manifest.csv in " + dir);
  std::stringstream buf;
  buf << min.rdbuf();
  auto manifest = manifest_from_csv(buf.str());

  std::set<std::string> file_ids;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".fbag")
      file_ids.insert(entry.path().stem().string());
  std::set<std::string> manifest_ids;
  for (const auto& row : manifest.rows) manifest_ids.insert(row.bag_id);
  if (file_ids != manifest_ids)
    throw Error(ErrorCode::IdMismatch,
                "bag files and manifest rows disagree on bag_id set");

  std::vector<FeatureBag> bags;
  bags.reserve(manifest.rows.size());
  for (const auto& row : manifest.rows) {
    std::ifstream bin(fs::path(dir) / (row.bag_id + ".fbag"),
                      std::ios::binary);
    if (!bin)
      throw Error(ErrorCode::StoreIo, "missing bag file for " + row.bag_id);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(bin)),
                                    std::istreambuf_iterator<char>());
    auto bag = deserialize_bag(bytes);
    bag.bag_id = row.bag_id;
    bag.validate();
    bags.push_back(std::move(bag));
  }
  return {std::move(bags), std::move(manifest)};
}

std::vector<TargetSpec> select_targets(
    const CohortManifest& manifest, std::int64_t min_positives,
    const std::vector<std::string>& overrides) {
  if (min_positives < 1)
    throw Error(ErrorCode::ConfigError, "min_positives must be >= 1");
  manifest.validate();
  std::set<std::string> override_set(overrides.begin(), overrides.end());
  for (const auto& name : override_set)
    if (manifest.target_index(name) < 0)
      throw Error(ErrorCode::UnknownTarget, "override target not in manifest: " + name);

  std::vector<TargetSpec> specs;
  specs.reserve(manifest.target_ids.size());
  for (std::size_t t = 0; t < manifest.target_ids.size(); ++t) {
    TargetSpec spec;
    spec.target_id = manifest.target_ids[t];
    std::int64_t labeled = 0;
    for (const auto& row : manifest.rows) {
      if (row.labels[t] == kLabelNA) continue;
      ++labeled;
      spec.positive_count += row.labels[t];
    }
    spec.prevalence =
        labeled > 0 ? double(spec.positive_count) / double(labeled) : 0.0;
    spec.override_included = override_set.count(spec.target_id) > 0;
    spec.included =
        spec.positive_count >= min_positives || spec.override_included;
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace mtmil
