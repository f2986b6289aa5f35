#pragma once

#include <random>
#include <vector>

#include "bopn/offset_codec.hpp"
#include "bopn/types.hpp"

namespace bopn::testing {

struct Instance {
  std::size_t length = 0;
  std::size_t types = 0;
  int max_offset = 0;
  std::vector<EntityMention> entities;
};

/// N in [1,12], M in [1,3], up to 4 distinct (possibly nested or
/// overlapping) entities, S in {1,2,3}.
inline Instance random_instance(std::mt19937_64& rng) {
  Instance inst;
  inst.length = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
  inst.types = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  inst.max_offset = std::uniform_int_distribution<int>(1, 3)(rng);
  const int count = std::uniform_int_distribution<int>(0, 4)(rng);
  EntitySet chosen;
  for (int attempt = 0; attempt < 50 && static_cast<int>(chosen.size()) < count; ++attempt) {
    const int n = static_cast<int>(inst.length);
    int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
    if (a > b) std::swap(a, b);
    const int m = std::uniform_int_distribution<int>(0, static_cast<int>(inst.types) - 1)(rng);
    chosen.insert({m, a, b});
  }
  inst.entities.assign(chosen.begin(), chosen.end());
  return inst;
}

/// Overwrites `flips` random cells with random offset labels (never Center).
inline OffsetGrid corrupt_with_offsets(OffsetGrid grid, int flips, std::mt19937_64& rng) {
  const auto space = grid.label_space();
  if (space.size() <= 2) return grid;
  for (int k = 0; k < flips; ++k) {
    const auto m = std::uniform_int_distribution<std::size_t>(0, grid.types() - 1)(rng);
    const auto i = std::uniform_int_distribution<std::size_t>(0, grid.length() - 1)(rng);
    const auto j = std::uniform_int_distribution<std::size_t>(0, grid.length() - 1)(rng);
    const auto label =
        std::uniform_int_distribution<int>(2, static_cast<int>(space.size()) - 1)(rng);
    grid.set(m, i, j, static_cast<LabelIndex>(label));
  }
  return grid;
}

/// Overwrites `flips` random cells with uniformly random labels, Center included.
inline OffsetGrid corrupt_any(OffsetGrid grid, int flips, std::mt19937_64& rng) {
  const auto space = grid.label_space();
  for (int k = 0; k < flips; ++k) {
    const auto m = std::uniform_int_distribution<std::size_t>(0, grid.types() - 1)(rng);
    const auto i = std::uniform_int_distribution<std::size_t>(0, grid.length() - 1)(rng);
    const auto j = std::uniform_int_distribution<std::size_t>(0, grid.length() - 1)(rng);
    const auto label =
        std::uniform_int_distribution<int>(0, static_cast<int>(space.size()) - 1)(rng);
    grid.set(m, i, j, static_cast<LabelIndex>(label));
  }
  return grid;
}

inline bool is_subset(const EntitySet& small, const EntitySet& big) {
  for (const auto& e : small)
    if (!big.contains(e)) return false;
  return true;
}

}  // namespace bopn::testing
