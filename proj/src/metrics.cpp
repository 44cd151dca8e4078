#include "mmsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmsim {

double percentile(std::span<const double> sorted, double p) {
    if (sorted.empty()) return 0.0;
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

Summary summarize(std::vector<double> samples) {
    Summary s;
    s.count = samples.size();
    if (samples.empty()) return s;
    std::sort(samples.begin(), samples.end());
    s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    s.p50 = percentile(samples, 50);
    s.p90 = percentile(samples, 90);
    s.p95 = percentile(samples, 95);
    s.p99 = percentile(samples, 99);
    s.max = samples.back();
    return s;
}

}  // namespace mmsim
