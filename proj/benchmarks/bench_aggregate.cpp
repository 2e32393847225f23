#include <benchmark/benchmark.h>

#include "flexireg/aggregate.hpp"
#include "flexireg/rng.hpp"
#include "flexireg/synth.hpp"

namespace {

void BM_AggregateRegions(benchmark::State& state) {
  flexireg::SynthParams params;
  params.extent = 8000.0;
  params.regions = static_cast<int>(state.range(0));
  const flexireg::SynthCity city = flexireg::generate_synthetic_city(2, params);
  const flexireg::HexGrid grid =
      flexireg::build_hex_grid(city.bbox, params.edge_length);
  const flexireg::OverlapMap overlap =
      flexireg::build_overlap_map(city.regions, grid);
  flexireg::Rng rng(5);
  Eigen::MatrixXd E(static_cast<Eigen::Index>(grid.size()), 96);
  for (Eigen::Index i = 0; i < E.rows(); ++i)
    for (Eigen::Index j = 0; j < E.cols(); ++j) E(i, j) = rng.normal();
  for (auto _ : state) {
    flexireg::RegionEmbeddings H = flexireg::aggregate_region_embeddings(
        E, overlap, flexireg::AggregateWeights::kOverlap);
    benchmark::DoNotOptimize(H.H.data());
  }
}

}  // namespace

BENCHMARK(BM_AggregateRegions)->Arg(30)->Arg(60)->Arg(120);
