#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mmsim/codec_sched.hpp"
#include "mmsim/decode_cost.hpp"
#include "mmsim/interference.hpp"
#include "mmsim/metrics.hpp"
#include "mmsim/orchestrator.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

enum class ArchKind { Monolithic, Split, Unified };

const char* to_string(ArchKind a);
ArchKind arch_from_string(const std::string& s);

struct ArchConfig {
    ArchKind kind = ArchKind::Unified;
    /// Split only: GPUs of the encode+prefill pool and of the decode pool.
    std::uint32_t ep_gpus = 2;
    std::uint32_t d_gpus = 2;
    /// Split only: seconds from prefill completion to decode eligibility.
    double transfer_cost = 0.05;
    /// Split only: scale phase costs by pool size. Off models pools as
    /// large as the whole cluster.
    bool scale_pools = true;

    bool operator==(const ArchConfig&) const = default;
};

struct ClusterConfig {
    std::uint32_t num_gpus = 4;
    std::uint32_t engines_per_gpu = 5;
    std::uint32_t max_decode_tasks = 4;
    /// CPU decode workers per GPU of the pool that hosts preprocessing.
    std::uint32_t cpu_decode_workers_per_gpu = 1;
    double image_decode_gpu = 0.004;
    double image_decode_cpu = 0.012;
    std::uint32_t patch_pages = 8192;
    std::uint32_t patch_page_size = 128;

    EngineTopology nvdec() const { return {num_gpus, engines_per_gpu, max_decode_tasks}; }
    bool operator==(const ClusterConfig&) const = default;
};

struct SloConfig {
    double ttft = 80.0;
    /// Bound on each request's mean time between tokens.
    double tbt = 0.7;
    /// Fraction of requests that must meet both bounds.
    double attainment = 0.9;

    bool operator==(const SloConfig&) const = default;
};

struct SimConfig {
    ClusterConfig cluster;
    ArchConfig arch;
    SchedulerConfig scheduler;
    PhaseCostModel phase;
    InterferenceTable interference = InterferenceTable::defaults();
    DecodeCostModel nvdec = DecodeCostModel::calibrated_nvdec();
    DecodeCostModel cpu = DecodeCostModel::calibrated_cpu();
    SloConfig slo;
    /// A stall is a token gap longer than stall_k times the median TBT.
    double stall_k = 5.0;
    /// Events after this simulated time are not processed.
    double horizon = std::numeric_limits<double>::infinity();

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

enum class Lane { Fused, EncodePrefill, Decode };

const char* to_string(Lane l);

struct IterationRecord {
    Lane lane = Lane::Fused;
    double start = 0.0;
    double end = 0.0;
    std::uint64_t n_e = 0;
    std::uint64_t n_p = 0;
    std::size_t decode_batch = 0;
    double encode_time = 0.0;
    double prefill_time = 0.0;
    double decode_time = 0.0;
    /// Degradation applied to this lane's decode work (1 when none).
    double decode_factor = 1.0;
    std::vector<EncodeItem> encode;
    std::vector<PrefillItem> prefill;

    bool operator==(const IterationRecord&) const = default;
};

struct Interval {
    double start = 0.0;
    double end = 0.0;
    bool operator==(const Interval&) const = default;
};

struct RequestRecord {
    std::uint64_t id = 0;
    Modality modality = Modality::Text;
    double arrival = 0.0;
    double preprocess_done = -1.0;
    double encode_done = -1.0;
    double prefill_done = -1.0;
    double first_token = -1.0;
    std::vector<double> token_times;
    std::uint64_t output_tokens = 0;
    bool completed = false;

    bool operator==(const RequestRecord&) const = default;
};

struct RunResult {
    ArchKind arch = ArchKind::Unified;
    std::vector<RequestRecord> requests;
    std::vector<IterationRecord> iterations;
    std::vector<Interval> encode_intervals;
    std::vector<Interval> decode_intervals;
    MetricsLog metrics;
    double end_time = 0.0;

    bool operator==(const RunResult&) const = default;
};

/// Simulates serving `trace` under cfg.arch. Deterministic in (cfg, trace, seed).
RunResult run(const SimConfig& cfg, const WorkloadTrace& trace, std::uint64_t seed);

/// Per-request and aggregate metrics of a finished run.
MetricsLog compute_metrics(const std::vector<RequestRecord>& requests, const SloConfig& slo);

enum class StallCause { EncodeBlock, FirstTokenStarvation };

const char* to_string(StallCause c);

struct Stall {
    double start = 0.0;
    double end = 0.0;
    StallCause cause = StallCause::FirstTokenStarvation;

    double length() const { return end - start; }
    bool operator==(const Stall&) const = default;
};

/// Intervals with outstanding requests but no token emitted for longer
/// than k times the median TBT.
std::vector<Stall> stall_report(const RunResult& result, double k = 5.0);
double total_stall_time(const std::vector<Stall>& stalls);

/// Lower bound on serving `trace` on an otherwise idle system: the arrival
/// span plus the slowest request's isolated latency.
double ideal_service_time(const SimConfig& cfg, const WorkloadTrace& trace);

std::string token_csv(const RunResult& result);

}  // namespace mmsim
