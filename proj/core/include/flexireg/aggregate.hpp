#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "flexireg/overlap.hpp"

namespace flexireg {

struct RegionEmbeddings {
  Eigen::MatrixXd H;                      // n x d, rows ordered by region id
  std::vector<std::int64_t> region_ids;   // row -> region id
  std::vector<std::int64_t> empty_regions;  // zero-cell regions (warnings)
};

enum class AggregateWeights {
  kOverlap,  // h_j = sum_i o_ji e_i
  kUniform,  // direct sum: every overlapping cell weighted 1
};

// Stage-2 aggregation: weighted sum of cell embeddings per region.
// Regions with no overlapping cells produce a zero row and a warning
// record. Unknown cell ids throw invalid_argument. `normalize` divides
// by the coefficient sum (off by default, matching the unnormalized
// formula).
RegionEmbeddings aggregate_region_embeddings(
    const Eigen::MatrixXd& E, const OverlapMap& overlap,
    AggregateWeights weights = AggregateWeights::kOverlap, bool normalize = false);

}  // namespace flexireg
