#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmsim/decode_cost.hpp"
#include "mmsim/gop_planner.hpp"

namespace mmsim {

struct EngineTopology {
    std::uint32_t num_gpus = 1;
    std::uint32_t engines_per_gpu = 5;
    /// Concurrent decode workers admitted per GPU.
    std::uint32_t max_decode_tasks = 4;

    std::uint32_t total_engines() const { return num_gpus * engines_per_gpu; }
    void validate() const;
};

struct DecodeJob {
    std::uint64_t id = 0;
    DecodePlan plan;
    double arrival = 0.0;
};

/// One rank's share of one job, reduced to what the scheduler needs. Rank r
/// of a job runs on GPU r mod num_gpus.
struct WorkerLoad {
    std::uint64_t job = 0;
    std::uint32_t rank = 0;
    std::uint32_t gpu = 0;
    double arrival = 0.0;
    std::vector<double> segment_durations;
    /// Frames this rank emits (targets plus padding); drives memory accounting.
    std::uint64_t frames = 0;
};

/// Converts plans into per-rank worker loads using `model`. Jitter, when
/// enabled, is a pure function of (seed, job, rank, segment).
std::vector<WorkerLoad> expand_jobs(std::span<const DecodeJob> jobs, const EngineTopology& topo,
                                    const DecodeCostModel& model, std::uint64_t seed = 0);

enum class TraceEventKind { WorkerAdmit, WorkerReady, SegmentStart, SegmentEnd, WorkerDone };

const char* to_string(TraceEventKind kind);

struct TraceEvent {
    double time = 0.0;
    TraceEventKind kind = TraceEventKind::SegmentStart;
    std::uint32_t gpu = 0;
    /// Engine index within the GPU, -1 for worker-level events.
    std::int32_t engine = -1;
    std::uint64_t job = 0;
    std::uint32_t rank = 0;
    std::int32_t segment = -1;

    bool operator==(const TraceEvent&) const = default;
};

struct WorkerResult {
    std::uint64_t job = 0;
    std::uint32_t rank = 0;
    std::uint32_t gpu = 0;
    double arrival = 0.0;
    double admitted = 0.0;
    double ready = 0.0;
    double completion = 0.0;
    std::uint64_t frames = 0;

    bool operator==(const WorkerResult&) const = default;
};

struct JobResult {
    std::uint64_t job = 0;
    double arrival = 0.0;
    double completion = 0.0;

    bool operator==(const JobResult&) const = default;
};

struct ScheduleTrace {
    std::vector<TraceEvent> events;
    std::vector<WorkerResult> workers;
    std::vector<JobResult> jobs;
    double makespan = 0.0;
    /// Busy seconds per engine, indexed gpu * engines_per_gpu + engine.
    std::vector<double> engine_busy;

    const JobResult& job(std::uint64_t id) const;
    std::vector<double> utilization() const;
    bool operator==(const ScheduleTrace&) const = default;
};

/// GOP-segment granularity dispatch: a freed engine takes the next segment of
/// the worker it just served, otherwise the longest-waiting ready worker's.
ScheduleTrace schedule_stall_free(std::span<const WorkerLoad> workers, const EngineTopology& topo,
                                  double worker_init = 0.0);

/// Baseline: a video binds min(segments, N) engines, dispatches its segments
/// in order onto them, and holds every bound engine until its last segment
/// finishes. Admission is strictly FIFO.
ScheduleTrace schedule_whole_video(std::span<const WorkerLoad> workers, const EngineTopology& topo,
                                   double worker_init = 0.0);

ScheduleTrace schedule_stall_free(std::span<const DecodeJob> jobs, const EngineTopology& topo,
                                  const DecodeCostModel& model, std::uint64_t seed = 0);
ScheduleTrace schedule_whole_video(std::span<const DecodeJob> jobs, const EngineTopology& topo,
                                   const DecodeCostModel& model, std::uint64_t seed = 0);

enum class MemoryPolicy { Preallocate, DeferredPerRank };

struct MemoryPeak {
    std::uint32_t gpu = 0;
    std::uint64_t peak_frames = 0;
    /// First instant the peak is reached.
    double peak_time = 0.0;

    bool operator==(const MemoryPeak&) const = default;
};

/// Peak resident decoded frames per GPU. Preallocate holds a rank's frames
/// from job arrival until handoff; DeferredPerRank from the rank's decode
/// completion until handoff. Handoff is job completion plus `handoff_delay`.
std::vector<MemoryPeak> account_memory(const ScheduleTrace& trace, MemoryPolicy policy,
                                       std::uint32_t num_gpus, double handoff_delay = 0.0);

struct SpeedupRow {
    EngineTopology topo;
    double latency = 0.0;
    double speedup = 0.0;
};

/// Decode latency of one video on each topology relative to one engine on
/// one GPU, all under stall-free scheduling.
std::vector<SpeedupRow> decode_speedup(const VideoMeta& meta, const FrameSelection& sel,
                                       std::span<const EngineTopology> ladder,
                                       const DecodeCostModel& model, std::uint32_t temporal_patch = 1);

std::string trace_csv(const ScheduleTrace& trace, std::uint32_t engines_per_gpu);

}  // namespace mmsim
