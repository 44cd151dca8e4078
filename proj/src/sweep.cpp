#include "mmsim/sweep.hpp"

#include <algorithm>
#include <stdexcept>

#include "mmsim/errors.hpp"

namespace mmsim {

namespace {

void check_ladder(std::span<const double> ladder) {
    if (ladder.empty()) throw ConfigError("sweep.rates", "ladder is empty");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (!(ladder[i] > 0)) throw ConfigError("sweep.rates", "rates must be > 0");
        if (i > 0 && !(ladder[i] > ladder[i - 1])) throw ConfigError("sweep.rates", "rates must increase");
    }
}

}  // namespace

RatePoint evaluate_rate(const SimConfig& cfg, ArchKind arch, const WorkloadConfig& workload, double rate,
                        std::uint64_t seed) {
    WorkloadConfig w = workload;
    w.rate = rate;
    const auto trace = generate_workload(w, seed);
    SimConfig c = cfg;
    c.arch.kind = arch;
    c.horizon = trace.first_arrival() + 10.0 * ideal_service_time(c, trace);
    const auto result = run(c, trace, seed);
    const double a = result.metrics.slo_attainment;
    return {rate, a, a >= cfg.slo.attainment};
}

std::vector<CapacityRow> sweep_serial(const SimConfig& cfg, const WorkloadConfig& workload,
                                      std::span<const double> ladder, std::span<const ArchKind> archs,
                                      std::uint64_t seed) {
    check_ladder(ladder);
    std::vector<CapacityRow> rows;
    for (auto arch : archs) {
        CapacityRow row;
        row.arch = arch;
        // Invariant: ladder[< lo] pass, ladder[>= hi] fail.
        std::size_t lo = 0;
        std::size_t hi = ladder.size();
        while (lo < hi) {
            const std::size_t mid = lo + (hi - lo) / 2;
            const auto p = evaluate_rate(cfg, arch, workload, ladder[mid], seed);
            row.evaluated.push_back(p);
            if (p.meets) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        std::sort(row.evaluated.begin(), row.evaluated.end(),
                  [](const RatePoint& a, const RatePoint& b) { return a.rate < b.rate; });
        row.capacity = lo == 0 ? 0.0 : ladder[lo - 1];
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<CapacityRow> sweep_parallel(const SimConfig& cfg, const WorkloadConfig& workload,
                                        std::span<const double> ladder, std::span<const ArchKind> archs,
                                        std::uint64_t seed) {
    check_ladder(ladder);
    const auto n_rates = static_cast<long>(ladder.size());
    const auto total = n_rates * static_cast<long>(archs.size());
    std::vector<RatePoint> points(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic)
    for (long k = 0; k < total; ++k) {
        const auto a = static_cast<std::size_t>(k / n_rates);
        const auto r = static_cast<std::size_t>(k % n_rates);
        points[static_cast<std::size_t>(k)] = evaluate_rate(cfg, archs[a], workload, ladder[r], seed);
    }
    std::vector<CapacityRow> rows;
    for (std::size_t a = 0; a < archs.size(); ++a) {
        CapacityRow row;
        row.arch = archs[a];
        row.evaluated.assign(points.begin() + static_cast<long>(a) * n_rates,
                             points.begin() + static_cast<long>(a + 1) * n_rates);
        for (const auto& p : row.evaluated) {
            if (!p.meets) break;
            row.capacity = p.rate;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace mmsim
