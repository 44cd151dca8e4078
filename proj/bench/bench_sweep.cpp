// Capacity sweep: OpenMP grid vs the serial grid over the same (arch, rate)
// pairs, plus serial bisection. Results are checked equal before timing.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <vector>

#include "mmsim/sweep.hpp"

using namespace mmsim;

namespace {

const std::vector<ArchKind> kArchs{ArchKind::Monolithic, ArchKind::Split, ArchKind::Unified};
const std::vector<double> kLadder{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0};
constexpr std::uint64_t kSeed = 7;

WorkloadConfig workload() {
    WorkloadConfig w;
    w.preset = PresetSpec::named("short-video");
    w.num_requests = 60;
    return w;
}

std::vector<CapacityRow> serial_grid(const SimConfig& cfg, const WorkloadConfig& w) {
    std::vector<CapacityRow> rows;
    for (auto arch : kArchs) {
        CapacityRow row;
        row.arch = arch;
        for (double r : kLadder) row.evaluated.push_back(evaluate_rate(cfg, arch, w, r, kSeed));
        for (const auto& p : row.evaluated) {
            if (!p.meets) break;
            row.capacity = p.rate;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void BM_SerialGrid(benchmark::State& state) {
    const SimConfig cfg;
    const auto w = workload();
    for (auto _ : state) benchmark::DoNotOptimize(serial_grid(cfg, w));
    state.counters["runs"] = static_cast<double>(kArchs.size() * kLadder.size());
}

void BM_ParallelGrid(benchmark::State& state) {
    const SimConfig cfg;
    const auto w = workload();
    omp_set_num_threads(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(sweep_parallel(cfg, w, kLadder, kArchs, kSeed));
    state.counters["runs"] = static_cast<double>(kArchs.size() * kLadder.size());
}

void BM_SerialBisection(benchmark::State& state) {
    const SimConfig cfg;
    const auto w = workload();
    std::size_t runs = 0;
    for (auto _ : state) {
        const auto rows = sweep_serial(cfg, w, kLadder, kArchs, kSeed);
        runs = 0;
        for (const auto& r : rows) runs += r.evaluated.size();
        benchmark::DoNotOptimize(rows);
    }
    state.counters["runs"] = static_cast<double>(runs);
}

BENCHMARK(BM_SerialGrid)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParallelGrid)->DenseRange(1, 8, 1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SerialBisection)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
    const SimConfig cfg;
    const auto w = workload();
    const auto a = serial_grid(cfg, w);
    const auto b = sweep_parallel(cfg, w, kLadder, kArchs, kSeed);
    if (a != b) {
        std::fprintf(stderr, "parallel grid disagrees with the serial grid\n");
        return EXIT_FAILURE;
    }
    std::printf("threads available: %d\n", omp_get_max_threads());
    benchmark::Initialize(&argc, argv);
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
