#include "flexireg/evalharness.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "flexireg/rng.hpp"

namespace flexireg {

void compute_metrics(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred,
                     double* mae, double* rmse, double* r2) {
  const Eigen::Index n = y_true.size();
  if (y_pred.size() != n)
    throw std::invalid_argument("compute_metrics: length mismatch");
  if (n < 2) throw std::invalid_argument("compute_metrics: need at least 2 points");
  const Eigen::ArrayXd res = (y_true - y_pred).array();
  if (mae != nullptr) *mae = res.abs().mean();
  if (rmse != nullptr) *rmse = std::sqrt(res.square().mean());
  if (r2 != nullptr) {
    const double ss_tot = (y_true.array() - y_true.mean()).square().sum();
    if (ss_tot <= 0.0)
      throw std::invalid_argument("compute_metrics: constant y_true, R^2 undefined");
    *r2 = 1.0 - res.square().sum() / ss_tot;
  }
}

std::vector<std::vector<Eigen::Index>> kfold_indices(Eigen::Index n, int folds,
                                                     std::uint64_t seed) {
  if (folds < 2 || n < folds)
    throw std::invalid_argument("kfold_indices: need 2 <= folds <= n");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::substream(seed, "kfold");
  rng.shuffle(order);
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(folds));
  const Eigen::Index base = n / folds;
  const Eigen::Index rem = n % folds;
  Eigen::Index pos = 0;
  for (int f = 0; f < folds; ++f) {
    const Eigen::Index size = base + (f < rem ? 1 : 0);
    out[static_cast<std::size_t>(f)].assign(order.begin() + pos,
                                            order.begin() + pos + size);
    pos += size;
  }
  return out;
}

Eigen::VectorXd RidgeModel::predict(const Eigen::MatrixXd& X) const {
  if (X.cols() != w.size())
    throw std::invalid_argument("RidgeModel::predict: feature width mismatch");
  Eigen::MatrixXd Xs = X.rowwise() - mu.transpose();
  Xs.array().rowwise() /= sd.transpose().array();
  return (Xs * w).array() + intercept;
}

RidgeModel ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     double lambda) {
  if (X.rows() != y.size())
    throw std::invalid_argument("ridge_fit: row count mismatch");
  if (X.rows() < 2) throw std::invalid_argument("ridge_fit: need at least 2 rows");
  if (lambda < 0.0) throw std::invalid_argument("ridge_fit: negative lambda");

  RidgeModel model;
  model.mu = X.colwise().mean();
  Eigen::MatrixXd Xs = X.rowwise() - model.mu.transpose();
  model.sd = (Xs.array().square().colwise().sum() /
              static_cast<double>(X.rows() - 1))
                 .sqrt();
  for (Eigen::Index j = 0; j < model.sd.size(); ++j)
    if (model.sd(j) <= 0.0) model.sd(j) = 1.0;
  Xs.array().rowwise() /= model.sd.transpose().array();

  model.intercept = y.mean();
  const Eigen::VectorXd yc = y.array() - model.intercept;
  const Eigen::Index k = X.cols();
  Eigen::MatrixXd A = Xs.transpose() * Xs;
  A.diagonal().array() += lambda;
  const Eigen::VectorXd b = Xs.transpose() * yc;
  const auto ldlt = A.ldlt();
  model.w = ldlt.solve(b);

  const double b_norm = b.norm();
  const double residual = (A * model.w - b).norm();
  // rcond() catches exactly singular but consistent systems, where the
  // solve residual alone stays small
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12 ||
      !model.w.allFinite() ||
      residual > 1e-8 * std::max(1.0, b_norm) * std::max<double>(1, k)) {
    throw std::runtime_error(
        "ridge_fit: normal equations are singular or ill-conditioned; "
        "use lambda > 0");
  }
  return model;
}

namespace {

MetricsReport pool_metrics(const std::string& task_name,
                           const std::vector<std::vector<Eigen::Index>>& folds,
                           const Eigen::VectorXd& y,
                           const Eigen::VectorXd& pooled_pred) {
  MetricsReport report;
  report.task_name = task_name;
  compute_metrics(y, pooled_pred, &report.mae, &report.rmse, &report.r2);
  for (const auto& fold : folds) {
    Eigen::VectorXd yt(static_cast<Eigen::Index>(fold.size()));
    Eigen::VectorXd yp(yt.size());
    for (std::size_t i = 0; i < fold.size(); ++i) {
      yt(static_cast<Eigen::Index>(i)) = y(fold[i]);
      yp(static_cast<Eigen::Index>(i)) = pooled_pred(fold[i]);
    }
    FoldMetrics fm;
    // per-fold R^2 can be undefined for tiny constant folds; report 0 there
    try {
      compute_metrics(yt, yp, &fm.mae, &fm.rmse, &fm.r2);
    } catch (const std::invalid_argument&) {
      compute_metrics(yt, yp, &fm.mae, &fm.rmse, nullptr);
      fm.r2 = 0.0;
    }
    report.per_fold.push_back(fm);
  }
  return report;
}

std::vector<Eigen::Index> complement(const std::vector<Eigen::Index>& fold,
                                     Eigen::Index n) {
  std::vector<char> held(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i : fold) held[static_cast<std::size_t>(i)] = 1;
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(n) - fold.size());
  for (Eigen::Index i = 0; i < n; ++i)
    if (held[static_cast<std::size_t>(i)] == 0) out.push_back(i);
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X,
                          const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = y(rows[i]);
  return out;
}

}  // namespace

MetricsReport ridge_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double lambda, std::uint64_t seed, int folds) {
  if (X.rows() != y.size()) throw std::invalid_argument("ridge_cv: row mismatch");
  const auto fold_sets = kfold_indices(X.rows(), folds, seed);
  Eigen::VectorXd pooled(X.rows());
  for (const auto& fold : fold_sets) {
    const auto train = complement(fold, X.rows());
    const RidgeModel model = ridge_fit(take_rows(X, train), take(y, train), lambda);
    const Eigen::VectorXd pred = model.predict(take_rows(X, fold));
    for (std::size_t i = 0; i < fold.size(); ++i)
      pooled(fold[i]) = pred(static_cast<Eigen::Index>(i));
  }
  return pool_metrics("", fold_sets, y, pooled);
}

Eigen::MatrixXd random_embeddings(Eigen::Index n, Eigen::Index dims,
                                  std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "random-baseline");
  Eigen::MatrixXd out(n, dims);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < dims; ++j) out(i, j) = rng.normal();
  return out;
}

MetricsReport evaluate_plain(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const std::string& task_name, double lambda, int folds,
                             std::uint64_t seed) {
  const std::uint64_t fold_seed = seed ^ fnv1a64("task-folds:" + task_name);
  MetricsReport report = ridge_cv(X, y, lambda, fold_seed, folds);
  report.task_name = task_name;
  return report;
}

MetricsReport evaluate_with_enhancer(const EnhancerEvalInputs& in,
                                     const PromptConfig& prompt_cfg, double lambda,
                                     int folds, std::uint64_t seed) {
  const Eigen::Index n = in.H.rows();
  if (in.targets.size() != n)
    throw std::invalid_argument("evaluate_with_enhancer: target size mismatch");
  const std::uint64_t fold_seed = seed ^ fnv1a64("task-folds:" + in.task_name);
  const auto fold_sets = kfold_indices(n, folds, fold_seed);

  Eigen::VectorXd pooled(n);
  int fold_no = 0;
  for (const auto& fold : fold_sets) {
    const auto train = complement(fold, n);

    PromptInputs pin;
    pin.H = in.H;
    pin.H_text_raw = in.H_text_raw;
    pin.region_images = in.region_images;
    pin.targets = in.targets;
    // mask held-out targets so a leak would poison training immediately
    for (Eigen::Index i : fold)
      pin.targets(i) = std::numeric_limits<double>::quiet_NaN();
    pin.train_idx = train;

    PromptConfig cfg = prompt_cfg;
    cfg.seed = seed ^ fnv1a64("enhancer:" + in.task_name + ":fold" +
                              std::to_string(fold_no));
    PromptEnhancer enhancer(std::move(pin), cfg);
    const PromptResult trained = enhancer.train();

    const RidgeModel model =
        ridge_fit(take_rows(trained.enhanced, train), take(in.targets, train), lambda);
    const Eigen::VectorXd pred = model.predict(take_rows(trained.enhanced, fold));
    for (std::size_t i = 0; i < fold.size(); ++i)
      pooled(fold[i]) = pred(static_cast<Eigen::Index>(i));
    ++fold_no;
  }
  return pool_metrics(in.task_name, fold_sets, in.targets, pooled);
}

}  // namespace flexireg
