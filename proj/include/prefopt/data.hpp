#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prefopt/core.hpp"

namespace prefopt {

// Synthetic Bradley-Terry generator configuration. Prompt and response
// features are standard normal; the hidden reward vector is standard normal
// with unit normalization. Train/valid disjointness is carried entirely by
// the seeds.
struct GeneratorConfig {
  int n_prompts_train = 200;
  int n_prompts_valid = 50;
  int candidates_per_prompt = 4;
  int feature_dim = 16;
  std::uint64_t reward_vector_seed = 0;
  std::uint64_t prompt_seed_train = 1;
  std::uint64_t prompt_seed_valid = 2;
  std::uint64_t response_seed_train = 3;
  std::uint64_t response_seed_valid = 4;
  bool preference_noise = false;  // BT-sample labels instead of argmax
  int length_min = 5;
  int length_max = 50;

  void validate() const;
  // Derives the five stream seeds from one master seed (s, s+1, ..., s+4).
  static GeneratorConfig from_master_seed(std::uint64_t seed);
};

// The four-way OOD split. Within each multi-candidate prompt the chosen
// response has the highest oracle reward and the rejected the lowest.
struct SplitDataset {
  std::vector<PreferenceInstance> id;
  std::vector<PreferenceInstance> prompt_ood;
  std::vector<PreferenceInstance> response_ood;
  std::vector<PreferenceInstance> mutual_ood;
  GeneratorConfig config;                 // generator metadata
  std::vector<double> reward_weights;     // hidden v (dimension 2D)

  std::vector<PreferenceInstance> all() const;
};

/// Deterministic four-split generation; same config gives byte-identical
/// datasets. Throws ValidationError when candidates_per_prompt < 2 or the
/// seed-disjointness invariants are broken.
SplitDataset generate(const GeneratorConfig& config);

/// Bradley-Terry label orientation: keeps the reward ordering with
/// probability sigma(delta_r). Equal rewards give a fair coin.
bool bt_keeps_order(double delta_r, std::mt19937_64& rng);

// Line-delimited JSON dataset I/O. Reading is strict: unknown fields and
// missing required fields are rejected with their line number; writing then
// reading then writing is byte-identical.
void write_dataset(const std::string& path, std::span<const PreferenceInstance> instances);
std::vector<PreferenceInstance> read_dataset(const std::string& path);

// Log-prob dumps: policy (and optional reference) log-probabilities exported
// by an external trainer, usable by the diagnostics without a PolicyModel.
void write_logp_dump(const std::string& path, std::span<const ScoredInstance> scored);
std::vector<ScoredInstance> read_logp_dump(const std::string& path);

}  // namespace prefopt
