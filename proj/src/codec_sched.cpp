#include "mmsim/codec_sched.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>
#include <tuple>

#include "mmsim/errors.hpp"

namespace mmsim {

// ---------------------------------------------------------------------------
// Cost model

double DecodeCostModel::frame_cost(Codec codec, ResolutionClass rc) const {
    auto it = per_frame_cost.find({codec, rc});
    return it == per_frame_cost.end() ? default_frame_cost : it->second;
}

double DecodeCostModel::seek(Codec codec) const {
    auto it = seek_cost.find(codec);
    return it == seek_cost.end() ? 0.0 : it->second;
}

void DecodeCostModel::validate() const {
    for (const auto& [key, v] : per_frame_cost) {
        if (v < 0) throw ConfigError("decode_cost.per_frame_cost", "negative cost");
    }
    for (const auto& [codec, v] : seek_cost) {
        if (v < 0) throw ConfigError("decode_cost.seek_cost", "negative cost");
    }
    if (engine_init_cost < 0) throw ConfigError("decode_cost.engine_init_cost", "negative cost");
    if (worker_init_serialization < 0) throw ConfigError("decode_cost.worker_init_serialization", "negative cost");
    if (jitter < 0 || jitter >= 1) throw ConfigError("decode_cost.jitter", "must be in [0, 1)");
    if (default_frame_cost < 0) throw ConfigError("decode_cost.default_frame_cost", "negative cost");
    if (auto it = seek_cost.find(Codec::H264); it != seek_cost.end() && (it->second < 0.05 || it->second > 0.1)) {
        throw ConfigError("decode_cost.seek_cost.h264", "must lie in [0.05, 0.1] s");
    }
}

namespace {

// Per-frame costs scale with pixel count relative to 720p.
void fill_resolutions(DecodeCostModel& m, Codec codec, double cost_720p) {
    m.per_frame_cost[{codec, ResolutionClass::SD}] = cost_720p * 0.45;
    m.per_frame_cost[{codec, ResolutionClass::HD720}] = cost_720p;
    m.per_frame_cost[{codec, ResolutionClass::FHD1080}] = cost_720p * 2.25;
    m.per_frame_cost[{codec, ResolutionClass::UHD}] = cost_720p * 9.0;
}

}  // namespace

DecodeCostModel DecodeCostModel::calibrated_nvdec() {
    DecodeCostModel m;
    fill_resolutions(m, Codec::H264, 0.0014);
    fill_resolutions(m, Codec::H265, 0.0016);
    fill_resolutions(m, Codec::VP9, 0.0018);
    fill_resolutions(m, Codec::Other, 0.0020);
    m.seek_cost = {{Codec::H264, 0.075}, {Codec::H265, 0.010}, {Codec::VP9, 0.010}, {Codec::Other, 0.010}};
    m.engine_init_cost = 0.10;
    m.worker_init_serialization = 0.30;
    m.default_frame_cost = 0.002;
    return m;
}

DecodeCostModel DecodeCostModel::calibrated_cpu() {
    DecodeCostModel m;
    fill_resolutions(m, Codec::H264, 0.0009);
    fill_resolutions(m, Codec::H265, 0.0022);
    fill_resolutions(m, Codec::VP9, 0.0020);
    fill_resolutions(m, Codec::Other, 0.0020);
    m.seek_cost = {{Codec::H264, 0.075}, {Codec::H265, 0.010}, {Codec::VP9, 0.010}, {Codec::Other, 0.010}};
    m.engine_init_cost = 0.02;
    m.worker_init_serialization = 0.0;
    m.default_frame_cost = 0.002;
    return m;
}

DecodeCostModel DecodeCostModel::linear(double frame_cost) {
    DecodeCostModel m;
    m.default_frame_cost = frame_cost;
    return m;
}

// ---------------------------------------------------------------------------

void EngineTopology::validate() const {
    if (num_gpus == 0) throw ConfigError("topology.num_gpus", "must be >= 1");
    if (engines_per_gpu == 0) throw ConfigError("topology.engines_per_gpu", "must be >= 1");
    if (max_decode_tasks == 0) throw ConfigError("topology.max_decode_tasks", "must be >= 1");
}

const char* to_string(TraceEventKind kind) {
    switch (kind) {
        case TraceEventKind::WorkerAdmit: return "worker_admit";
        case TraceEventKind::WorkerReady: return "worker_ready";
        case TraceEventKind::SegmentStart: return "segment_start";
        case TraceEventKind::SegmentEnd: return "segment_end";
        case TraceEventKind::WorkerDone: return "worker_done";
    }
    return "unknown";
}

const JobResult& ScheduleTrace::job(std::uint64_t id) const {
    for (const auto& j : jobs) {
        if (j.job == id) return j;
    }
    throw std::out_of_range("job not in trace");
}

std::vector<double> ScheduleTrace::utilization() const {
    std::vector<double> u(engine_busy.size(), 0.0);
    if (makespan <= 0) return u;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = engine_busy[i] / makespan;
    return u;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double unit_noise(std::uint64_t seed, std::uint64_t job, std::uint32_t rank, std::size_t seg) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ job);
    h = splitmix64(h ^ rank);
    h = splitmix64(h ^ seg);
    return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

}  // namespace

std::vector<WorkerLoad> expand_jobs(std::span<const DecodeJob> jobs, const EngineTopology& topo,
                                    const DecodeCostModel& model, std::uint64_t seed) {
    topo.validate();
    std::vector<WorkerLoad> out;
    for (const auto& job : jobs) {
        const auto& plan = job.plan;
        for (std::size_t r = 0; r < plan.ranks.size(); ++r) {
            WorkerLoad w;
            w.job = job.id;
            w.rank = static_cast<std::uint32_t>(r);
            w.gpu = static_cast<std::uint32_t>(r % topo.num_gpus);
            w.arrival = job.arrival;
            w.frames = plan.ranks[r].emitted_frames();
            const auto& segs = plan.ranks[r].segments;
            for (std::size_t s = 0; s < segs.size(); ++s) {
                double d = estimate_work(segs[s], plan.codec, plan.resolution, model);
                if (model.jitter > 0) d *= 1.0 + model.jitter * unit_noise(seed, job.id, w.rank, s);
                w.segment_durations.push_back(d);
            }
            out.push_back(std::move(w));
        }
    }
    return out;
}

namespace {

enum class Ev { Arrival, Ready, SegEnd };

struct Event {
    double time;
    std::uint64_t seq;
    Ev kind;
    std::size_t worker;
    std::uint32_t engine;
    std::size_t seg;

    bool operator>(const Event& o) const { return std::tie(time, seq) > std::tie(o.time, o.seq); }
};

using EventQueue = std::priority_queue<Event, std::vector<Event>, std::greater<>>;

/// Shared bookkeeping for both single-GPU simulations.
struct GpuSim {
    const std::vector<const WorkerLoad*>& loads;
    std::uint32_t gpu;
    std::uint32_t engines;
    std::uint32_t cap;
    double worker_init;
    ScheduleTrace& trace;
    std::size_t engine_base;

    EventQueue events;
    std::uint64_t seq = 0;
    double init_free = 0.0;
    std::deque<std::size_t> waiting;
    std::uint32_t admitted = 0;
    std::vector<std::size_t> done_segments;
    std::vector<WorkerResult> results;

    GpuSim(const std::vector<const WorkerLoad*>& l, std::uint32_t g, const EngineTopology& topo,
           double init, ScheduleTrace& t)
        : loads(l), gpu(g), engines(topo.engines_per_gpu), cap(topo.max_decode_tasks),
          worker_init(init), trace(t), engine_base(std::size_t{g} * topo.engines_per_gpu),
          done_segments(l.size(), 0), results(l.size()) {
        for (std::size_t w = 0; w < loads.size(); ++w) {
            results[w].job = loads[w]->job;
            results[w].rank = loads[w]->rank;
            results[w].gpu = gpu;
            results[w].arrival = loads[w]->arrival;
            results[w].frames = loads[w]->frames;
            push(loads[w]->arrival, Ev::Arrival, w, 0);
        }
    }

    void push(double t, Ev kind, std::size_t w, std::uint32_t engine, std::size_t seg = 0) {
        events.push({t, seq++, kind, w, engine, seg});
    }

    void emit(double t, TraceEventKind kind, std::size_t w, std::int32_t engine = -1, std::int32_t seg = -1) {
        trace.events.push_back({t, kind, gpu, engine, loads[w]->job, loads[w]->rank, seg});
    }

    void admit(double now, std::size_t w) {
        ++admitted;
        const double ready = std::max(now, init_free) + worker_init;
        init_free = ready;
        results[w].admitted = now;
        results[w].ready = ready;
        emit(now, TraceEventKind::WorkerAdmit, w);
        push(ready, Ev::Ready, w, 0);
    }

    void start_segment(double now, std::size_t w, std::size_t seg, std::uint32_t engine) {
        const double d = loads[w]->segment_durations[seg];
        emit(now, TraceEventKind::SegmentStart, w, static_cast<std::int32_t>(engine), static_cast<std::int32_t>(seg));
        trace.engine_busy[engine_base + engine] += d;
        push(now + d, Ev::SegEnd, w, engine, seg);
    }

    /// Returns true when the worker has finished every segment.
    bool finish_segment(double now, std::size_t w, std::size_t seg, std::uint32_t engine) {
        emit(now, TraceEventKind::SegmentEnd, w, static_cast<std::int32_t>(engine), static_cast<std::int32_t>(seg));
        return ++done_segments[w] == loads[w]->segment_durations.size();
    }

    void worker_done(double now, std::size_t w) {
        --admitted;
        results[w].completion = now;
        emit(now, TraceEventKind::WorkerDone, w);
    }
};

std::vector<std::vector<const WorkerLoad*>> by_gpu(std::span<const WorkerLoad> workers, const EngineTopology& topo) {
    topo.validate();
    std::vector<std::vector<const WorkerLoad*>> out(topo.num_gpus);
    for (const auto& w : workers) {
        if (w.gpu >= topo.num_gpus) throw std::invalid_argument("worker gpu outside topology");
        out[w.gpu].push_back(&w);
    }
    for (auto& v : out) {
        std::stable_sort(v.begin(), v.end(), [](const WorkerLoad* a, const WorkerLoad* b) {
            return std::tie(a->arrival, a->job, a->rank) < std::tie(b->arrival, b->job, b->rank);
        });
    }
    return out;
}

void finalize(ScheduleTrace& trace, std::vector<WorkerResult>&& all) {
    std::stable_sort(trace.events.begin(), trace.events.end(), [](const TraceEvent& a, const TraceEvent& b) {
        return std::tie(a.time, a.gpu) < std::tie(b.time, b.gpu);
    });
    std::sort(all.begin(), all.end(), [](const WorkerResult& a, const WorkerResult& b) {
        return std::tie(a.job, a.rank) < std::tie(b.job, b.rank);
    });
    std::map<std::uint64_t, JobResult> jobs;
    for (const auto& w : all) {
        auto [it, inserted] = jobs.try_emplace(w.job, JobResult{w.job, w.arrival, w.completion});
        if (!inserted) it->second.completion = std::max(it->second.completion, w.completion);
        trace.makespan = std::max(trace.makespan, w.completion);
    }
    for (auto& [id, j] : jobs) trace.jobs.push_back(j);
    trace.workers = std::move(all);
}

void run_stall_free_gpu(GpuSim& sim) {
    const std::size_t n = sim.loads.size();
    std::vector<std::size_t> next_seg(n, 0);
    std::vector<bool> ready(n, false);
    std::set<std::uint32_t> idle;
    for (std::uint32_t e = 0; e < sim.engines; ++e) idle.insert(e);

    auto has_queued = [&](std::size_t w) { return next_seg[w] < sim.loads[w]->segment_durations.size(); };
    auto try_admit = [&](double now) {
        while (!sim.waiting.empty() && sim.admitted < sim.cap) {
            const auto w = sim.waiting.front();
            sim.waiting.pop_front();
            sim.admit(now, w);
        }
    };
    // Workers are indexed in (arrival, job, rank) order, so the smallest
    // ready index with queued work is the longest-waiting one.
    auto oldest_ready = [&]() -> std::size_t {
        for (std::size_t w = 0; w < n; ++w) {
            if (ready[w] && has_queued(w)) return w;
        }
        return n;
    };

    while (!sim.events.empty()) {
        const Event ev = sim.events.top();
        sim.events.pop();
        const double now = ev.time;
        switch (ev.kind) {
            case Ev::Arrival:
                sim.waiting.push_back(ev.worker);
                try_admit(now);
                break;
            case Ev::Ready: {
                const auto w = ev.worker;
                ready[w] = true;
                sim.emit(now, TraceEventKind::WorkerReady, w);
                if (!has_queued(w)) {
                    ready[w] = false;
                    sim.worker_done(now, w);
                    try_admit(now);
                    break;
                }
                while (!idle.empty() && has_queued(w)) {
                    const auto e = *idle.begin();
                    idle.erase(idle.begin());
                    sim.start_segment(now, w, next_seg[w]++, e);
                }
                break;
            }
            case Ev::SegEnd: {
                const auto w = ev.worker;
                const bool finished = sim.finish_segment(now, w, ev.seg, ev.engine);
                if (finished) {
                    ready[w] = false;
                    sim.worker_done(now, w);
                    try_admit(now);
                }
                std::size_t pick = has_queued(w) ? w : oldest_ready();
                if (pick < n) {
                    sim.start_segment(now, pick, next_seg[pick]++, ev.engine);
                } else {
                    idle.insert(ev.engine);
                }
                break;
            }
        }
    }
}

void run_whole_video_gpu(GpuSim& sim) {
    const std::size_t n = sim.loads.size();
    std::set<std::uint32_t> idle;
    for (std::uint32_t e = 0; e < sim.engines; ++e) idle.insert(e);
    std::vector<std::vector<std::uint32_t>> bound(n);  // engines held by each worker
    std::vector<std::size_t> next_seg(n, 0);

    auto lanes_for = [&](std::size_t w) {
        return std::max<std::size_t>(1, std::min<std::size_t>(sim.loads[w]->segment_durations.size(), sim.engines));
    };
    auto try_admit = [&](double now) {
        while (!sim.waiting.empty() && sim.admitted < sim.cap) {
            const auto w = sim.waiting.front();
            const auto k = lanes_for(w);
            if (idle.size() < k) break;  // head-of-line blocking
            sim.waiting.pop_front();
            for (std::size_t i = 0; i < k; ++i) {
                bound[w].push_back(*idle.begin());
                idle.erase(idle.begin());
            }
            sim.admit(now, w);
        }
    };
    auto release = [&](double now, std::size_t w) {
        for (auto e : bound[w]) idle.insert(e);
        bound[w].clear();
        sim.worker_done(now, w);
        try_admit(now);
    };

    while (!sim.events.empty()) {
        const Event ev = sim.events.top();
        sim.events.pop();
        const double now = ev.time;
        switch (ev.kind) {
            case Ev::Arrival:
                sim.waiting.push_back(ev.worker);
                try_admit(now);
                break;
            case Ev::Ready: {
                const auto w = ev.worker;
                sim.emit(now, TraceEventKind::WorkerReady, w);
                if (sim.loads[w]->segment_durations.empty()) {
                    release(now, w);
                    break;
                }
                for (auto e : bound[w]) sim.start_segment(now, w, next_seg[w]++, e);
                break;
            }
            case Ev::SegEnd: {
                const auto w = ev.worker;
                // Bound engines only ever serve their own video; an engine
                // with nothing left stays held until the video completes.
                if (sim.finish_segment(now, w, ev.seg, ev.engine)) {
                    release(now, w);
                } else if (next_seg[w] < sim.loads[w]->segment_durations.size()) {
                    sim.start_segment(now, w, next_seg[w]++, ev.engine);
                }
                break;
            }
        }
    }
}

template <typename Run>
ScheduleTrace simulate(std::span<const WorkerLoad> workers, const EngineTopology& topo, double worker_init, Run run) {
    ScheduleTrace trace;
    trace.engine_busy.assign(topo.total_engines(), 0.0);
    std::vector<WorkerResult> all;
    const auto groups = by_gpu(workers, topo);
    for (std::uint32_t g = 0; g < topo.num_gpus; ++g) {
        GpuSim sim(groups[g], g, topo, worker_init, trace);
        run(sim);
        all.insert(all.end(), sim.results.begin(), sim.results.end());
    }
    finalize(trace, std::move(all));
    return trace;
}

}  // namespace

ScheduleTrace schedule_stall_free(std::span<const WorkerLoad> workers, const EngineTopology& topo, double worker_init) {
    return simulate(workers, topo, worker_init, run_stall_free_gpu);
}

ScheduleTrace schedule_whole_video(std::span<const WorkerLoad> workers, const EngineTopology& topo, double worker_init) {
    return simulate(workers, topo, worker_init, run_whole_video_gpu);
}

ScheduleTrace schedule_stall_free(std::span<const DecodeJob> jobs, const EngineTopology& topo,
                                  const DecodeCostModel& model, std::uint64_t seed) {
    const auto loads = expand_jobs(jobs, topo, model, seed);
    return schedule_stall_free(loads, topo, model.worker_init_serialization);
}

ScheduleTrace schedule_whole_video(std::span<const DecodeJob> jobs, const EngineTopology& topo,
                                   const DecodeCostModel& model, std::uint64_t seed) {
    const auto loads = expand_jobs(jobs, topo, model, seed);
    return schedule_whole_video(loads, topo, model.worker_init_serialization);
}

std::vector<MemoryPeak> account_memory(const ScheduleTrace& trace, MemoryPolicy policy, std::uint32_t num_gpus,
                                       double handoff_delay) {
    struct Delta {
        double time;
        int order;  // charges before releases at equal time
        std::int64_t frames;
    };
    std::vector<std::vector<Delta>> per_gpu(num_gpus);
    for (const auto& w : trace.workers) {
        if (w.gpu >= num_gpus) throw std::invalid_argument("worker gpu outside topology");
        const double handoff = trace.job(w.job).completion + handoff_delay;
        const double from = policy == MemoryPolicy::Preallocate ? w.arrival : w.completion;
        const auto f = static_cast<std::int64_t>(w.frames);
        per_gpu[w.gpu].push_back({from, 0, f});
        per_gpu[w.gpu].push_back({handoff, 1, -f});
    }
    std::vector<MemoryPeak> out;
    for (std::uint32_t g = 0; g < num_gpus; ++g) {
        auto& d = per_gpu[g];
        std::stable_sort(d.begin(), d.end(), [](const Delta& a, const Delta& b) {
            return std::tie(a.time, a.order) < std::tie(b.time, b.order);
        });
        MemoryPeak peak{g, 0, 0.0};
        std::int64_t level = 0;
        for (const auto& x : d) {
            level += x.frames;
            if (level > static_cast<std::int64_t>(peak.peak_frames)) {
                peak.peak_frames = static_cast<std::uint64_t>(level);
                peak.peak_time = x.time;
            }
        }
        out.push_back(peak);
    }
    return out;
}

std::vector<SpeedupRow> decode_speedup(const VideoMeta& meta, const FrameSelection& sel,
                                       std::span<const EngineTopology> ladder, const DecodeCostModel& model,
                                       std::uint32_t temporal_patch) {
    auto latency = [&](const EngineTopology& topo) {
        DecodeJob job{0, make_plan(meta, sel, topo.num_gpus, topo.engines_per_gpu, temporal_patch), 0.0};
        return schedule_stall_free(std::span(&job, 1), topo, model).makespan;
    };
    const double base = latency(EngineTopology{1, 1, 1});
    std::vector<SpeedupRow> rows;
    for (const auto& topo : ladder) {
        const double l = latency(topo);
        rows.push_back({topo, l, l > 0 ? base / l : 0.0});
    }
    return rows;
}

std::string trace_csv(const ScheduleTrace& trace, std::uint32_t engines_per_gpu) {
    std::string out = "time,gpu,engine,event,job,rank,segment\n";
    char line[160];
    for (const auto& e : trace.events) {
        const long long engine = e.engine < 0 ? -1 : static_cast<long long>(e.gpu) * engines_per_gpu + e.engine;
        std::snprintf(line, sizeof line, "%.9f,%u,%lld,%s,%llu,%u,%d\n", e.time, e.gpu, engine, to_string(e.kind),
                      static_cast<unsigned long long>(e.job), e.rank, e.segment);
        out += line;
    }
    return out;
}

}  // namespace mmsim
