#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "flexireg/prompt.hpp"

namespace flexireg {

struct FoldMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

struct MetricsReport {
  std::string task_name;
  std::string variant = "full";
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;  // pooled out-of-fold
  std::vector<FoldMetrics> per_fold;
};

// Standard MAE / RMSE / R^2. Throws on length mismatch, n < 2, or constant
// y_true (R^2 undefined).
void compute_metrics(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred,
                     double* mae, double* rmse, double* r2);

// Seeded shuffled k-fold partition: disjoint, covering, sizes differ by <= 1.
std::vector<std::vector<Eigen::Index>> kfold_indices(Eigen::Index n, int folds,
                                                     std::uint64_t seed);

// Closed-form ridge on standardized features. Prediction model:
// y = mean(y_train) + ((x - mu) / sd) . w  with  (Xs'Xs + lambda I) w = Xs' yc.
struct RidgeModel {
  Eigen::VectorXd mu, sd;  // train standardization
  Eigen::VectorXd w;
  double intercept = 0.0;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

// Throws if the normal equations are singular (suggesting lambda > 0).
RidgeModel ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     double lambda);

// k-fold CV with pooled out-of-fold metrics; per-fold breakdown included.
MetricsReport ridge_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double lambda, std::uint64_t seed, int folds = 10);

inline MetricsReport ridge_ten_fold(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    double lambda, std::uint64_t seed) {
  return ridge_cv(X, y, lambda, seed, 10);
}

// Gaussian random embeddings, the desk-scale stand-in baseline.
Eigen::MatrixXd random_embeddings(Eigen::Index n, Eigen::Index dims,
                                  std::uint64_t seed);

// Per-fold fold-hygienic enhancer evaluation: for each fold, train the
// prompt enhancer on the train rows only (held-out targets are masked to
// NaN so any leak poisons the loss), produce H-hat for all rows, fit ridge
// on the train rows, and predict the held-out rows. Metrics are pooled.
struct EnhancerEvalInputs {
  Eigen::MatrixXd H;
  Eigen::MatrixXd H_text_raw;                  // may be empty when text off
  std::vector<Eigen::MatrixXd> region_images;  // may be empty when sv off
  Eigen::VectorXd targets;
  std::string task_name;
};

MetricsReport evaluate_with_enhancer(const EnhancerEvalInputs& in,
                                     const PromptConfig& prompt_cfg, double lambda,
                                     int folds, std::uint64_t seed);

// Plain ridge CV on a fixed embedding matrix (w/o-PE path and baselines).
MetricsReport evaluate_plain(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const std::string& task_name, double lambda, int folds,
                             std::uint64_t seed);

}  // namespace flexireg
