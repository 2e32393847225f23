#include <benchmark/benchmark.h>

#include "flexireg/hexgrid.hpp"

namespace {

void BM_BuildHexGrid(benchmark::State& state) {
  const double extent = static_cast<double>(state.range(0));
  const flexireg::BBox bbox{{0.0, 0.0}, {extent, extent}};
  for (auto _ : state) {
    flexireg::HexGrid grid = flexireg::build_hex_grid(bbox, 250.0);
    benchmark::DoNotOptimize(grid.cells.data());
  }
  state.SetLabel(std::to_string(flexireg::build_hex_grid(bbox, 250.0).size()) +
                 " cells");
}

}  // namespace

BENCHMARK(BM_BuildHexGrid)->Arg(2000)->Arg(8000)->Arg(16000);
