#pragma once

#include <Eigen/Dense>

namespace flexireg {

// A_{i,j} = cosine(x_i, x_j). All-zero rows get 0 everywhere, including the
// diagonal, so isolated cells stay attention-neutral.
Eigen::MatrixXd cosine_adjacency(const Eigen::MatrixXd& features);

// Neighbor-id rows (m x 6, -1 padding) to m-dim binary incidence rows; the
// result feeds cosine_adjacency for the geographic-neighbor view.
Eigen::MatrixXd neighbor_feature_vectorize(const Eigen::MatrixXi& neighbors,
                                           Eigen::Index num_cells);

}  // namespace flexireg
