#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtmil/error.hpp"

namespace mtmil {

using FeatureMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Tile class codes stored in bag files.
enum TileClass : std::uint8_t {
  kTumor = 0,
  kStroma = 1,
  kEpithelium = 2,
  kNecrosis = 3,
  kImmune = 4,
  kOther = 5,
};
constexpr int kNumTileClasses = 6;

// Missing label sentinel; labels are {0, 1, kLabelNA}.
constexpr std::int8_t kLabelNA = -1;

// One slide: a bag of tile feature vectors plus optional per-tile metadata.
struct FeatureBag {
  std::string bag_id;
  FeatureMatrix features;  // n_tiles x dim
  std::optional<std::vector<std::uint32_t>> tile_coords;  // 2*n_tiles, (x,y)
  std::optional<std::vector<std::uint8_t>> tile_class;
  std::optional<std::vector<std::uint8_t>> tile_tumor_label;

  std::int64_t n_tiles() const { return features.rows(); }
  std::int64_t dim() const { return features.cols(); }

  // Throws ValidationError if any type invariant fails.
  void validate() const;
};

enum class StainOrigin { kInternal, kExternal };

struct ManifestRow {
  std::string bag_id;
  std::string cohort_id;
  std::string timestamp;  // ISO-8601 date
  StainOrigin stain_origin = StainOrigin::kInternal;
  std::string scanner;
  std::string tissue_site;
  std::string procedure;
  std::optional<bool> grade_high;
  std::optional<bool> is_primary_site;
  std::vector<std::int8_t> labels;  // aligned with CohortManifest::target_ids
};

struct CohortManifest {
  std::vector<std::string> target_ids;
  std::vector<ManifestRow> rows;

  void validate() const;
  const ManifestRow* find(const std::string& bag_id) const;
  int target_index(const std::string& target_id) const;  // -1 if absent
};

struct TargetSpec {
  std::string target_id;
  std::int64_t positive_count = 0;
  double prevalence = 0.0;  // positives / non-NA labels
  bool included = false;
  bool override_included = false;
};

void write_feature_store(const std::vector<FeatureBag>& bags,
                         const CohortManifest& manifest,
                         const std::string& dir);

std::pair<std::vector<FeatureBag>, CohortManifest> read_feature_store(
    const std::string& dir);

// Bag files round-trip through these; exposed for format tests.
std::vector<std::uint8_t> serialize_bag(const FeatureBag& bag);
FeatureBag deserialize_bag(const std::vector<std::uint8_t>& bytes);

std::string manifest_to_csv(const CohortManifest& manifest);
CohortManifest manifest_from_csv(const std::string& csv);

// One spec per manifest target; included iff positives >= min_positives or
// the target is named in overrides.
std::vector<TargetSpec> select_targets(const CohortManifest& manifest,
                                       std::int64_t min_positives,
                                       const std::vector<std::string>& overrides);

}  // namespace mtmil
