#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtmil/feature_store.hpp"
#include "mtmil/keyval.hpp"

namespace mtmil {

// One target fires when any of its latent programs is active (noisy-OR).
struct SynthTarget {
  std::string target_id;
  std::vector<int> programs;
};

struct SynthConfig {
  std::uint64_t seed = 42;
  std::int64_t n_bags = 100;
  std::int64_t dim = 64;
  std::vector<SynthTarget> targets;
  std::int64_t n_programs = 0;
  std::vector<double> program_activity;  // q_p per program, in (0,1)
  double label_noise = 0.0;              // flip probability, [0, 0.5)
  std::int64_t tiles_min = 50;
  std::int64_t tiles_max = 150;
  double tumor_fraction_mean = 0.3;
  double signal_amplitude = 1.0;
  double noise_sigma = 1.0;
  double external_fraction = 0.0;
  double stain_shift_magnitude = 0.0;
  double grade_effect = 0.0;
  double site_effect = 0.0;

  void validate() const;
  static SynthConfig from_keyval(const KeyValueFile& kv);
  static std::vector<std::string> config_keys();
};

std::pair<std::vector<FeatureBag>, CohortManifest> generate_cohort(
    const SynthConfig& config);

struct PlantedBagTruth {
  std::string bag_id;
  std::vector<std::uint8_t> tile_class;
  std::vector<std::uint8_t> tumor_flag;
};

// Echo of the planted per-tile metadata, in bag tile order.
std::vector<PlantedBagTruth> planted_truth(const std::vector<FeatureBag>& bags);

// Latent program activations for one bag, recomputed from the keyed stream
// that generation used. bag_index is the generation index in 0..n_bags-1.
std::vector<bool> planted_programs(const SynthConfig& config,
                                   std::int64_t bag_index);

// Generation index encoded in the bag_id ("bag_000042" -> 42).
std::int64_t bag_index_from_id(const std::string& bag_id);

}  // namespace mtmil
