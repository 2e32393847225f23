#include <benchmark/benchmark.h>

#include "flexireg/gridlearner.hpp"
#include "flexireg/rng.hpp"

namespace {

Eigen::MatrixXd randn(flexireg::Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

void BM_GatLayerForward(benchmark::State& state) {
  const Eigen::Index m = state.range(0);
  const Eigen::Index d = 96;
  flexireg::Rng rng(3);
  const Eigen::MatrixXd Z = randn(rng, m, d);
  // sparse-ish adjacency: ring plus random long edges
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    A(i, (i + 1) % m) = A((i + 1) % m, i) = 1.0;
    const auto j = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(m)));
    A(i, j) = A(j, i) = 1.0;
  }
  const Eigen::MatrixXd W = randn(rng, d, d);
  const Eigen::VectorXd a = randn(rng, 3 * d, 1).col(0);
  const Eigen::VectorXd w = randn(rng, d, 1).col(0);
  for (auto _ : state) {
    flexireg::GatLayerOut out = flexireg::gat_layer(Z, A, W, a, w);
    benchmark::DoNotOptimize(out.output.data());
  }
}

}  // namespace

BENCHMARK(BM_GatLayerForward)->Arg(128)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);
