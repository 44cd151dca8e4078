#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mmsim {

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample.
/// Returns 0 for an empty sample set.
double percentile(std::span<const double> sorted, double p);

struct Summary {
    std::size_t count = 0;
    double mean = 0.0;
    double p50 = 0.0;
    double p90 = 0.0;
    double p95 = 0.0;
    double p99 = 0.0;
    double max = 0.0;

    bool operator==(const Summary&) const = default;
};

Summary summarize(std::vector<double> samples);

struct RequestMetrics {
    std::uint64_t id = 0;
    bool completed = false;
    double ttft = 0.0;
    double mean_tbt = 0.0;
    double e2e = 0.0;
    std::uint64_t tokens = 0;
    bool meets_slo = false;

    bool operator==(const RequestMetrics&) const = default;
};

struct MetricsLog {
    std::vector<RequestMetrics> requests;
    std::vector<double> tbt_samples;
    Summary ttft;
    Summary tbt;
    Summary e2e;
    double throughput_tokens = 0.0;
    double throughput_requests = 0.0;
    double slo_attainment = 0.0;
    std::size_t completed = 0;
    std::size_t in_flight = 0;

    bool operator==(const MetricsLog&) const = default;
};

}  // namespace mmsim
