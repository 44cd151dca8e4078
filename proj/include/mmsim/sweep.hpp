#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmsim/pipeline_sim.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

struct RatePoint {
    double rate = 0.0;
    double attainment = 0.0;
    bool meets = false;

    bool operator==(const RatePoint&) const = default;
};

struct CapacityRow {
    ArchKind arch = ArchKind::Unified;
    /// Largest ladder rate meeting the attainment target, 0 if none does.
    double capacity = 0.0;
    /// Rates actually simulated, in ladder order.
    std::vector<RatePoint> evaluated;

    bool operator==(const CapacityRow&) const = default;
};

/// SLO attainment of one architecture at one offered rate. The run is cut
/// at ten times the workload's ideal service time.
RatePoint evaluate_rate(const SimConfig& cfg, ArchKind arch, const WorkloadConfig& workload, double rate,
                        std::uint64_t seed);

/// Binary search over the ladder per architecture, one run at a time.
/// Assumes attainment is monotone non-increasing in rate.
std::vector<CapacityRow> sweep_serial(const SimConfig& cfg, const WorkloadConfig& workload,
                                      std::span<const double> ladder, std::span<const ArchKind> archs,
                                      std::uint64_t seed);

/// Evaluates every (arch, rate) pair concurrently with OpenMP; the capacity
/// is the end of the longest passing prefix of the ladder.
std::vector<CapacityRow> sweep_parallel(const SimConfig& cfg, const WorkloadConfig& workload,
                                        std::span<const double> ladder, std::span<const ArchKind> archs,
                                        std::uint64_t seed);

}  // namespace mmsim
