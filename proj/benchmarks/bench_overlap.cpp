#include <benchmark/benchmark.h>

#include "flexireg/overlap.hpp"
#include "flexireg/synth.hpp"

namespace {

void BM_BuildOverlapMap(benchmark::State& state) {
  flexireg::SynthParams params;
  params.extent = static_cast<double>(state.range(0));
  params.regions = static_cast<int>(state.range(0)) / 100;
  const flexireg::SynthCity city = flexireg::generate_synthetic_city(1, params);
  const flexireg::HexGrid grid =
      flexireg::build_hex_grid(city.bbox, params.edge_length);
  for (auto _ : state) {
    flexireg::OverlapMap map = flexireg::build_overlap_map(city.regions, grid);
    benchmark::DoNotOptimize(&map);
  }
  state.SetLabel(std::to_string(city.regions.size()) + " regions x " +
                 std::to_string(grid.size()) + " cells");
}

}  // namespace

BENCHMARK(BM_BuildOverlapMap)->Arg(2000)->Arg(4000)->Arg(8000)->Unit(benchmark::kMillisecond);
