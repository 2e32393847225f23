#include "flexireg/aggregate.hpp"

#include <stdexcept>

namespace flexireg {

RegionEmbeddings aggregate_region_embeddings(const Eigen::MatrixXd& E,
                                             const OverlapMap& overlap,
                                             AggregateWeights weights,
                                             bool normalize) {
  RegionEmbeddings out;
  const auto n = static_cast<Eigen::Index>(overlap.entries.size());
  out.H = Eigen::MatrixXd::Zero(n, E.cols());
  out.region_ids.reserve(static_cast<std::size_t>(n));

  Eigen::Index row = 0;
  for (const auto& [rid, cells] : overlap.entries) {
    out.region_ids.push_back(rid);
    if (cells.empty()) {
      out.empty_regions.push_back(rid);
      ++row;
      continue;
    }
    double weight_sum = 0.0;
    for (const auto& [cid, coeff] : cells) {
      if (cid < 0 || cid >= E.rows())
        throw std::invalid_argument("aggregate_region_embeddings: cell id " +
                                    std::to_string(cid) + " not in embedding matrix");
      const double w = weights == AggregateWeights::kOverlap ? coeff : 1.0;
      out.H.row(row) += w * E.row(cid);
      weight_sum += w;
    }
    if (normalize && weight_sum > 0.0) out.H.row(row) /= weight_sum;
    ++row;
  }
  return out;
}

}  // namespace flexireg
