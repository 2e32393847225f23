#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "flexireg/aggregate.hpp"
#include "flexireg/evalharness.hpp"
#include "flexireg/rng.hpp"

using namespace flexireg;

namespace {

Eigen::MatrixXd randn(Rng& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

}  // namespace

TEST_SUITE("aggregate") {

TEST_CASE("weighted sum matches a hand computation") {
  Rng rng(81);
  const Eigen::MatrixXd E = randn(rng, 4, 3);
  OverlapMap map;
  map.entries[0] = {{0, 0.5}, {2, 0.25}};
  map.entries[1] = {{3, 1.0}};
  const RegionEmbeddings out = aggregate_region_embeddings(E, map);
  REQUIRE(out.H.rows() == 2);
  CHECK((out.H.row(0) - (0.5 * E.row(0) + 0.25 * E.row(2))).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((out.H.row(1) - E.row(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out.region_ids == std::vector<std::int64_t>{0, 1});
  CHECK(out.empty_regions.empty());
}

TEST_CASE("aggregation is linear in the cell embeddings") {
  Rng rng(82);
  const Eigen::MatrixXd E1 = randn(rng, 6, 4), E2 = randn(rng, 6, 4);
  OverlapMap map;
  map.entries[0] = {{0, 0.3}, {1, 0.9}, {5, 0.1}};
  map.entries[1] = {{2, 0.7}, {3, 0.2}};
  const Eigen::MatrixXd combined =
      aggregate_region_embeddings(2.0 * E1 + 3.0 * E2, map).H;
  const Eigen::MatrixXd separate =
      2.0 * aggregate_region_embeddings(E1, map).H +
      3.0 * aggregate_region_embeddings(E2, map).H;
  CHECK((combined - separate).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("merged-region embedding is the sum of part embeddings") {
  // a merged region's entry list is the concatenation of its parts'
  // entries, so its aggregate equals the sum of the part aggregates
  Rng rng(83);
  const Eigen::MatrixXd E = randn(rng, 8, 5);
  OverlapMap parts;
  parts.entries[0] = {{0, 0.5}, {1, 0.25}};
  parts.entries[1] = {{2, 0.75}, {3, 1.0}};
  OverlapMap merged;
  merged.entries[0] = {{0, 0.5}, {1, 0.25}, {2, 0.75}, {3, 1.0}};
  const Eigen::MatrixXd hp = aggregate_region_embeddings(E, parts).H;
  const Eigen::MatrixXd hm = aggregate_region_embeddings(E, merged).H;
  CHECK((hm.row(0) - (hp.row(0) + hp.row(1))).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("uniform weights sum overlapping cells directly") {
  Rng rng(84);
  const Eigen::MatrixXd E = randn(rng, 5, 3);
  OverlapMap map;
  map.entries[0] = {{1, 0.2}, {4, 0.9}};
  const Eigen::MatrixXd H =
      aggregate_region_embeddings(E, map, AggregateWeights::kUniform).H;
  CHECK((H.row(0) - (E.row(1) + E.row(4))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normalize divides by the coefficient sum") {
  Rng rng(85);
  const Eigen::MatrixXd E = randn(rng, 3, 2);
  OverlapMap map;
  map.entries[0] = {{0, 0.5}, {1, 1.5}};
  const Eigen::MatrixXd H =
      aggregate_region_embeddings(E, map, AggregateWeights::kOverlap, true).H;
  const Eigen::MatrixXd expect = (0.5 * E.row(0) + 1.5 * E.row(1)) / 2.0;
  CHECK((H.row(0) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("empty regions yield zero rows; unknown cells throw") {
  Rng rng(86);
  const Eigen::MatrixXd E = randn(rng, 3, 2);
  OverlapMap map;
  map.entries[0] = {{0, 1.0}};
  map.entries[5] = {};
  const RegionEmbeddings out = aggregate_region_embeddings(E, map);
  REQUIRE(out.H.rows() == 2);
  CHECK(out.H.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.empty_regions == std::vector<std::int64_t>{5});

  OverlapMap bad;
  bad.entries[0] = {{7, 0.5}};
  CHECK_THROWS_AS(aggregate_region_embeddings(E, bad), std::invalid_argument);
}

}  // TEST_SUITE

TEST_SUITE("evalharness") {

TEST_CASE("metrics match hand-computed values") {
  Eigen::VectorXd y(4), p(4);
  y << 1, 2, 3, 4;
  p << 1.5, 2, 2, 5;
  double mae, rmse, r2;
  compute_metrics(y, p, &mae, &rmse, &r2);
  CHECK(mae == doctest::Approx((0.5 + 0 + 1 + 1) / 4.0));
  CHECK(rmse == doctest::Approx(std::sqrt((0.25 + 0 + 1 + 1) / 4.0)));
  // R^2 = 1 - SS_res / SS_tot, SS_tot about the mean 2.5
  CHECK(r2 == doctest::Approx(1.0 - 2.25 / 5.0));
  // degenerate inputs
  CHECK_THROWS(compute_metrics(Eigen::VectorXd::Ones(3), p.head(3), &mae, &rmse, &r2));
  CHECK_THROWS(compute_metrics(y, p.head(3), &mae, &rmse, &r2));
}

TEST_CASE("k-fold partition properties") {
  for (const auto& [n, k] : std::vector<std::pair<Eigen::Index, int>>{
           {60, 10}, {23, 5}, {7, 7}}) {
    const auto folds = kfold_indices(n, k, 99);
    REQUIRE(static_cast<int>(folds.size()) == k);
    std::set<Eigen::Index> seen;
    std::size_t mn = 1u << 30, mx = 0;
    for (const auto& f : folds) {
      mn = std::min(mn, f.size());
      mx = std::max(mx, f.size());
      for (Eigen::Index i : f) {
        CHECK(i >= 0);
        CHECK(i < n);
        CHECK(seen.insert(i).second);  // disjoint
      }
    }
    CHECK(static_cast<Eigen::Index>(seen.size()) == n);  // covering
    CHECK(mx - mn <= 1);
  }
  // seed-stable, seed-sensitive
  CHECK(kfold_indices(30, 5, 1) == kfold_indices(30, 5, 1));
  CHECK(kfold_indices(30, 5, 1) != kfold_indices(30, 5, 2));
}

TEST_CASE("ridge with tiny lambda recovers a noiseless linear model") {
  Rng rng(87);
  const Eigen::MatrixXd X = randn(rng, 40, 3);
  Eigen::VectorXd w(3);
  w << 2.0, -1.0, 0.5;
  const Eigen::VectorXd y = (X * w).array() + 7.0;
  const RidgeModel model = ridge_fit(X, y, 1e-8);
  const Eigen::VectorXd pred = model.predict(X);
  CHECK((pred - y).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("ridge matches the closed-form normal equations") {
  Rng rng(88);
  const Eigen::MatrixXd X = randn(rng, 25, 4);
  const Eigen::VectorXd y = randn(rng, 25, 1).col(0);
  const double lambda = 3.7;
  const RidgeModel model = ridge_fit(X, y, lambda);

  // independent reference: standardize, center, solve, predict
  Eigen::MatrixXd Xs = X;
  Eigen::VectorXd mu(4), sd(4);
  for (int j = 0; j < 4; ++j) {
    mu(j) = X.col(j).mean();
    sd(j) = std::sqrt((X.col(j).array() - mu(j)).square().sum() /
                      static_cast<double>(X.rows() - 1));
    Xs.col(j) = (X.col(j).array() - mu(j)) / sd(j);
  }
  const double ym = y.mean();
  const Eigen::VectorXd w_ref =
      (Xs.transpose() * Xs + lambda * Eigen::MatrixXd::Identity(4, 4))
          .fullPivLu()
          .solve(Xs.transpose() * (y.array() - ym).matrix());
  const Eigen::VectorXd pred_ref = (Xs * w_ref).array() + ym;
  CHECK((model.predict(X) - pred_ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("singular design without regularization is rejected") {
  Eigen::MatrixXd X(6, 3);
  Rng rng(89);
  X.col(0) = randn(rng, 6, 1).col(0);
  X.col(1) = 2.0 * X.col(0);  // collinear
  X.col(2) = randn(rng, 6, 1).col(0);
  const Eigen::VectorXd y = randn(rng, 6, 1).col(0);
  CHECK_THROWS(ridge_fit(X, y, 0.0));
  CHECK_NOTHROW(ridge_fit(X, y, 1.0));
}

TEST_CASE("cross-validation separates informative from random features") {
  Rng rng(90);
  const Eigen::Index n = 80;
  const Eigen::MatrixXd X = randn(rng, n, 5);
  Eigen::VectorXd w(5);
  w << 1, -2, 0.5, 3, -1;
  Eigen::VectorXd y = X * w;
  for (Eigen::Index i = 0; i < n; ++i) y(i) += 0.05 * rng.normal();

  const MetricsReport good = ridge_ten_fold(X, y, 0.1, 5);
  CHECK(good.r2 > 0.95);
  REQUIRE(good.per_fold.size() == 10);

  const Eigen::MatrixXd R = random_embeddings(n, 5, 123);
  const MetricsReport bad = ridge_ten_fold(R, y, 0.1, 5);
  CHECK(bad.r2 < 0.3);
}

TEST_CASE("out-of-fold predictions drive the pooled metrics") {
  // with k = n (leave-one-out) each prediction never sees its own row:
  // a memorizing feature (y itself) still scores perfectly, but a
  // constant-leak check is impossible, so verify pooled == recomputed
  Rng rng(91);
  const Eigen::Index n = 24;
  const Eigen::MatrixXd X = randn(rng, n, 2);
  const Eigen::VectorXd y =
      (X.col(0) * 2.0 - X.col(1)).array() + 0.01;
  const MetricsReport rep = ridge_cv(X, y, 0.01, 7, 4);
  // pooled r2 must be reproducible from mae/rmse internal consistency
  CHECK(rep.rmse >= rep.mae);
  CHECK(rep.r2 <= 1.0);
  CHECK(rep.per_fold.size() == 4);
}

TEST_CASE("random embeddings are seed-deterministic") {
  const Eigen::MatrixXd a = random_embeddings(10, 6, 3);
  const Eigen::MatrixXd b = random_embeddings(10, 6, 3);
  const Eigen::MatrixXd c = random_embeddings(10, 6, 4);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("evaluate_plain reports the task name and folds") {
  Rng rng(92);
  const Eigen::MatrixXd X = randn(rng, 40, 3);
  const Eigen::VectorXd y = X.col(0) + 0.1 * randn(rng, 40, 1).col(0);
  const MetricsReport rep = evaluate_plain(X, y, "demo", 0.5, 5, 11);
  CHECK(rep.task_name == "demo");
  CHECK(rep.per_fold.size() == 5);
  CHECK(rep.r2 > 0.5);
}

TEST_CASE("enhancer evaluation is fold-hygienic and beats random features") {
  Rng rng(93);
  const Eigen::Index n = 30, d = 6;
  EnhancerEvalInputs in;
  in.H = randn(rng, n, d);
  in.targets = in.H.col(0) * 3.0 + in.H.col(2);
  for (Eigen::Index i = 0; i < n; ++i) in.targets(i) += 0.05 * rng.normal();
  in.task_name = "toy";

  PromptConfig cfg;
  cfg.d = static_cast<int>(d);
  cfg.head_hidden = 8;
  cfg.epochs = 10;
  cfg.text_mode = TextBranchMode::kOff;
  cfg.sv_mode = SvBranchMode::kOff;
  const MetricsReport rep = evaluate_with_enhancer(in, cfg, 0.5, 5, 21);
  CHECK(rep.task_name == "toy");
  CHECK(rep.per_fold.size() == 5);
  CHECK(rep.r2 > 0.5);  // H itself carries the signal through the concat

  // determinism: the whole report reproduces
  const MetricsReport rep2 = evaluate_with_enhancer(in, cfg, 0.5, 5, 21);
  CHECK(rep.r2 == rep2.r2);
  CHECK(rep.mae == rep2.mae);
}

}  // TEST_SUITE
