#include "masks.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "rng.hpp"

namespace solid::masks {

namespace {

constexpr int kMaxAnchorTries = 2000;
constexpr int kMaxLayoutRestarts = 200;

Rng scenario_rng(const ScenarioSpec& spec, std::uint64_t instance_id) {
  return make_rng(spec.seed, spec.regime == Regime::Global ? 0 : instance_id);
}

}  // namespace

const char* to_string(Pattern p) { return p == Pattern::Random ? "random" : "block"; }
const char* to_string(Regime r) { return r == Regime::Global ? "global" : "instance"; }

Pattern parse_pattern(const std::string& s) {
  if (s == "random") return Pattern::Random;
  if (s == "block") return Pattern::Block;
  fail(ErrorKind::Usage, "unknown mask pattern '" + s + "' (expected random|block)");
}

Regime parse_regime(const std::string& s) {
  if (s == "global") return Regime::Global;
  if (s == "instance") return Regime::Instance;
  fail(ErrorKind::Usage, "unknown mask regime '" + s + "' (expected global|instance)");
}

void ScenarioSpec::validate(int grid_n) const {
  require(grid_n > 0, ErrorKind::Validation, "masks: grid_n must be positive");
  require(overlap_fraction >= 0.0 && overlap_fraction <= 1.0, ErrorKind::Validation,
          "masks: overlap_fraction must lie in [0,1]");
  if (pattern == Pattern::Random) {
    require(density > 0.0 && density <= 1.0, ErrorKind::Validation,
            "masks: density must lie in (0,1]");
  } else {
    if (!(n_blocks >= 2 && n_blocks % 2 == 0)) fail(ErrorKind::Validation, "masks: n_blocks must be even and >= 2, got " + std::to_string(n_blocks));
    require(grid_n >= kBlockSize, ErrorKind::Validation, "masks: grid smaller than one block");
    if (!(std::size_t(n_blocks) * kBlockSize * kBlockSize <= std::size_t(grid_n) * grid_n)) fail(ErrorKind::Validation, "masks: " + std::to_string(n_blocks) + " blocks exceed the grid area");
  }
}

std::size_t pixel_budget(double density, int grid_n) {
  require(density > 0.0 && density <= 1.0, ErrorKind::Validation,
          "pixel_budget: density must lie in (0,1]");
  const double area = double(grid_n) * grid_n;
  // Tolerate representation error so exact products (0.25 * 64) are not floored down.
  return std::size_t(std::floor(density * area + 1e-9));
}

std::size_t scenario_budget(const ScenarioSpec& spec, int grid_n) {
  if (spec.pattern == Pattern::Random) return pixel_budget(spec.density, grid_n);
  return std::size_t(spec.n_blocks) * kBlockSize * kBlockSize;
}

MaskPair make_random_pair(const ScenarioSpec& spec, int grid_n, std::uint64_t instance_id) {
  spec.validate(grid_n);
  const std::size_t area = std::size_t(grid_n) * grid_n;
  const std::size_t budget = pixel_budget(spec.density, grid_n);
  if (!(budget >= 2)) fail(ErrorKind::Validation, "make_random_pair: budget " + std::to_string(budget) + " < 2");

  Rng rng = scenario_rng(spec, instance_id);
  std::vector<std::uint32_t> idx(area);
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t i = 0; i < budget; ++i) {
    const std::size_t j = uniform_int(rng, i, area - 1);
    std::swap(idx[i], idx[j]);
  }

  const std::size_t shared = std::size_t(std::llround(spec.overlap_fraction * double(budget)));
  const std::size_t rest = budget - shared;
  const std::size_t input_only = (rest + 1) / 2;  // odd remainder goes to the conditioning side

  MaskPair pair{Mask(grid_n, grid_n), Mask(grid_n, grid_n), spec, instance_id};
  for (std::size_t i = 0; i < budget; ++i) {
    const std::uint32_t p = idx[i];
    if (i < shared) {
      pair.m_i[p] = 1;
      pair.m_o[p] = 1;
    } else if (i < shared + input_only) {
      pair.m_i[p] = 1;
    } else {
      pair.m_o[p] = 1;
    }
  }
  return pair;
}

MaskPair make_block_pair(const ScenarioSpec& spec, int grid_n, std::uint64_t instance_id) {
  spec.validate(grid_n);
  Rng rng = scenario_rng(spec, instance_id);
  const int span = grid_n - kBlockSize;

  std::vector<std::pair<int, int>> anchors;
  int restarts = 0;
  for (;;) {
    anchors.clear();
    Mask occupied(grid_n, grid_n);
    bool ok = true;
    for (int b = 0; b < spec.n_blocks && ok; ++b) {
      ok = false;
      for (int t = 0; t < kMaxAnchorTries; ++t) {
        const int r0 = int(uniform_int(rng, 0, std::uint64_t(span)));
        const int c0 = int(uniform_int(rng, 0, std::uint64_t(span)));
        bool clash = false;
        for (int r = r0; r < r0 + kBlockSize && !clash; ++r)
          for (int c = c0; c < c0 + kBlockSize; ++c)
            if (occupied(r, c)) {
              clash = true;
              break;
            }
        if (clash) continue;
        for (int r = r0; r < r0 + kBlockSize; ++r)
          for (int c = c0; c < c0 + kBlockSize; ++c) occupied(r, c) = 1;
        anchors.emplace_back(r0, c0);
        ok = true;
        break;
      }
    }
    if (ok) break;
    if (++restarts >= kMaxLayoutRestarts) {
      fail(ErrorKind::Validation,
           "make_block_pair: could not place " + std::to_string(spec.n_blocks) +
               " non-overlapping 8x8 blocks on a " + std::to_string(grid_n) + "x" +
               std::to_string(grid_n) + " grid; last attempt placed " +
               std::to_string(anchors.size()) + " after " + std::to_string(restarts) + " restarts");
    }
  }

  const int shared = int(std::lround(spec.overlap_fraction * spec.n_blocks));
  const int rest = spec.n_blocks - shared;
  const int input_only = (rest + 1) / 2;
  MaskPair pair{Mask(grid_n, grid_n), Mask(grid_n, grid_n), spec, instance_id};
  for (int b = 0; b < spec.n_blocks; ++b) {
    const bool to_input = b < shared + input_only;
    const bool to_target = b < shared || b >= shared + input_only;
    const auto [r0, c0] = anchors[std::size_t(b)];
    for (int r = r0; r < r0 + kBlockSize; ++r)
      for (int c = c0; c < c0 + kBlockSize; ++c) {
        if (to_input) pair.m_i(r, c) = 1;
        if (to_target) pair.m_o(r, c) = 1;
      }
  }
  return pair;
}

MaskPair make_pair(const ScenarioSpec& spec, int grid_n, std::uint64_t instance_id) {
  return spec.pattern == Pattern::Random ? make_random_pair(spec, grid_n, instance_id)
                                         : make_block_pair(spec, grid_n, instance_id);
}

Field restrict(const Field& field, const Mask& mask) {
  require_same_shape(field, mask, "restrict");
  Field out(field.rows, field.cols);
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = mask[i] ? field[i] : 0.0;
  return out;
}

Mask mask_union(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "mask_union");
  Mask out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] || b[i]) ? 1 : 0;
  return out;
}

Mask mask_intersection(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "mask_intersection");
  Mask out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
  return out;
}

Mask mask_difference(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "mask_difference");
  Mask out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && !b[i]) ? 1 : 0;
  return out;
}

}  // namespace solid::masks
