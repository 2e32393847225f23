#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "flexireg/autodiff.hpp"

namespace flexireg {

struct GridLearnerConfig {
  int d = 144;
  int heads = 4;
  int gat_layers = 2;
  int fusion_layers = 3;
  double dropout = 0.1;
  double leaky_slope = 0.01;
  double margin = 1.0;
  double smooth_l1_beta = 1.0;
  int epochs = 2000;
  double lr = 1e-4;
  std::uint64_t seed = 7;
};

// Inputs to stage-1 training. Views present in `views` must have their
// matrices populated; "si" additionally needs sat_features.
struct GridLearnerInputs {
  Eigen::MatrixXd adj_poi;       // m x m cosine adjacency
  Eigen::MatrixXd adj_landuse;   // m x m
  Eigen::MatrixXd adj_neighbor;  // m x m
  Eigen::MatrixXd sat_features;  // m x 512 frozen backbone features
  Eigen::MatrixXd poi_counts;    // m x 15 (for the count objective)
  Eigen::MatrixXi neighbor_ids;  // m x 6 grid neighbors, -1 padding (triplets)
  std::vector<std::string> views = {"p", "l", "gn", "si"};
};

struct GridTrainResult {
  Eigen::MatrixXd embeddings;  // m x d
  // per epoch: loss_p, loss_l, loss_gn, loss_si, total
  std::vector<std::array<double, 5>> loss_curve;
  bool aborted = false;
  int epochs_run = 0;
};

class GridLearner {
 public:
  GridLearner(GridLearnerInputs inputs, GridLearnerConfig cfg);

  GridTrainResult train();
  Eigen::MatrixXd embeddings();  // eval-mode forward with current params

  // per-view task heads E^X = MLP_X(E), eval mode
  Eigen::MatrixXd view_head(const std::string& view);

  std::vector<ad::Param*> parameters();

 private:
  friend struct GridLearnerTestAccess;
  struct Impl;
  std::unique_ptr<Impl> impl_;

 public:
  ~GridLearner();
};

// White-box hook for gradient verification: evaluates the full training
// loss deterministically (dropout off, epoch-0 triplets when "gn" is
// active) and optionally returns analytic gradients aligned with
// GridLearner::parameters().
struct GridLearnerTestAccess {
  static double loss_and_grads(GridLearner& learner,
                               std::vector<Eigen::MatrixXd>* grads);
  // Runs one deterministic forward pass and returns the worst
  // |row sum - 1| over every attention map in the graph.
  static double max_softmax_row_error(GridLearner& learner);
};

// --- standalone forward pieces (also used by the unit tests) ---

struct GatLayerOut {
  Eigen::MatrixXd attention;  // m x m, rows sum to 1
  Eigen::MatrixXd output;     // m x d
};
// alpha = softmax_j(LeakyReLU(a^T [W z_i || W z_j || w A_ij]));
// out_i = LeakyReLU(sum_j alpha_ij W z_j)
GatLayerOut gat_layer(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& A,
                      const Eigen::MatrixXd& W, const Eigen::VectorXd& a,
                      const Eigen::VectorXd& w, double slope = 0.01);

struct InterViewOut {
  std::vector<Eigen::MatrixXd> attention;  // per head, v x v rows sum to 1
  std::vector<Eigen::MatrixXd> outputs;    // per view, m x d
};
// Per head: A = softmax(flat(Q) flat(K)^T / sqrt(d)) over views;
// per-view head outputs mixed by A, heads concatenated, merged by Wo.
InterViewOut inter_view_forward(const std::vector<Eigen::MatrixXd>& views,
                                const Eigen::MatrixXd& Wq, const Eigen::MatrixXd& Wk,
                                const Eigen::MatrixXd& Wv, const Eigen::MatrixXd& Wo,
                                int heads);

// Z^X = beta Z_intra^X + (1 - beta) Z_inter^X
std::vector<Eigen::MatrixXd> combine_views(const std::vector<Eigen::MatrixXd>& intra,
                                           const std::vector<Eigen::MatrixXd>& inter,
                                           double beta);

struct ViewFusionOut {
  Eigen::VectorXd weights;  // per view, sums to 1
  Eigen::MatrixXd fused;    // m x d
};
ViewFusionOut view_fusion(const std::vector<Eigen::MatrixXd>& views,
                          const Eigen::MatrixXd& W, const Eigen::VectorXd& a,
                          double slope = 0.01);

// --- loss formulas (double precision, plain inputs) ---

// (1/m^2) sum |A_ij - e_i . e_j|
double loss_graph_reconstruction(const Eigen::MatrixXd& E, const Eigen::MatrixXd& A);

// (1/m) sum max(||e_i - e_pos|| - ||e_i - e_neg|| + margin, 0)
double loss_neighbor_triplet(const Eigen::MatrixXd& E,
                             const std::vector<Eigen::Index>& pos,
                             const std::vector<Eigen::Index>& neg, double margin);

// mean smooth-L1 between predictions and targets
double loss_smooth_l1(const Eigen::VectorXd& pred, const Eigen::VectorXd& target,
                      double beta);

// Per-epoch triplet sampling: one uniform neighbor and one uniform
// non-neighbor per cell. Throws if a cell has no neighbor or no
// non-neighbor.
void sample_triplets(const Eigen::MatrixXi& neighbors, Eigen::Index m,
                     std::uint64_t seed, std::uint64_t epoch,
                     std::vector<Eigen::Index>& pos, std::vector<Eigen::Index>& neg);

}  // namespace flexireg
