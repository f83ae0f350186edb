#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "grid.hpp"

namespace solid::masks {

enum class Pattern { Random, Block };
enum class Regime { Global, Instance };

const char* to_string(Pattern p);
const char* to_string(Regime r);
Pattern parse_pattern(const std::string& s);
Regime parse_regime(const std::string& s);

inline constexpr int kBlockSize = 8;

struct ScenarioSpec {
  Pattern pattern = Pattern::Random;
  double density = 0.10;  // Random only
  int n_blocks = 2;       // Block only
  Regime regime = Regime::Instance;
  double overlap_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate(int grid_n) const;
};

struct MaskPair {
  Mask m_i;  // conditioning
  Mask m_o;  // target
  ScenarioSpec spec;
  std::uint64_t instance_id = 0;
};

/// floor(density * grid_n^2). The floor reproduces the 163-pixel figure at 4% of 64^2.
std::size_t pixel_budget(double density, int grid_n);

MaskPair make_random_pair(const ScenarioSpec& spec, int grid_n, std::uint64_t instance_id);
MaskPair make_block_pair(const ScenarioSpec& spec, int grid_n, std::uint64_t instance_id);
/// Dispatches on spec.pattern.
MaskPair make_pair(const ScenarioSpec& spec, int grid_n, std::uint64_t instance_id);

/// Total scenario budget |m_i ∪ m_o|.
std::size_t scenario_budget(const ScenarioSpec& spec, int grid_n);

/// M ⊙ U.
Field restrict(const Field& field, const Mask& mask);

Mask mask_union(const Mask& a, const Mask& b);
Mask mask_intersection(const Mask& a, const Mask& b);
/// a ∧ ¬b
Mask mask_difference(const Mask& a, const Mask& b);

}  // namespace solid::masks
