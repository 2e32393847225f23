#include "flexireg/graphs.hpp"

#include <stdexcept>

namespace flexireg {

Eigen::MatrixXd cosine_adjacency(const Eigen::MatrixXd& features) {
  if (!features.allFinite())
    throw std::invalid_argument("cosine_adjacency: non-finite features");
  const Eigen::Index m = features.rows();
  Eigen::VectorXd norms = features.rowwise().norm();
  Eigen::MatrixXd scaled = features;
  for (Eigen::Index i = 0; i < m; ++i)
    if (norms(i) > 0.0) scaled.row(i) /= norms(i);
  Eigen::MatrixXd a = scaled * scaled.transpose();
  // zero rows: similarity 0 everywhere, including self
  for (Eigen::Index i = 0; i < m; ++i) {
    if (norms(i) == 0.0) {
      a.row(i).setZero();
      a.col(i).setZero();
    }
  }
  // clamp fp drift to [-1, 1] and exact-symmetrize
  a = (a + a.transpose().eval()) / 2.0;
  a = a.cwiseMax(-1.0).cwiseMin(1.0);
  return a;
}

Eigen::MatrixXd neighbor_feature_vectorize(const Eigen::MatrixXi& neighbors,
                                           Eigen::Index num_cells) {
  const Eigen::Index m = neighbors.rows();
  Eigen::MatrixXd incidence = Eigen::MatrixXd::Zero(m, num_cells);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < neighbors.cols(); ++k) {
      const int id = neighbors(i, k);
      if (id == -1) continue;
      if (id < 0 || id >= num_cells)
        throw std::invalid_argument("neighbor_feature_vectorize: id out of range");
      incidence(i, id) = 1.0;
    }
  }
  return incidence;
}

}  // namespace flexireg
