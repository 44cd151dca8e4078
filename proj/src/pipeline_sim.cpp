#include "mmsim/pipeline_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <queue>
#include <tuple>

#include "mmsim/errors.hpp"
#include "mmsim/gop_planner.hpp"

namespace mmsim {

const char* to_string(ArchKind a) {
    switch (a) {
        case ArchKind::Monolithic: return "monolithic";
        case ArchKind::Split: return "split";
        case ArchKind::Unified: return "unified";
    }
    return "unknown";
}

ArchKind arch_from_string(const std::string& s) {
    if (s == "monolithic") return ArchKind::Monolithic;
    if (s == "split") return ArchKind::Split;
    if (s == "unified") return ArchKind::Unified;
    throw ConfigError("arch", "unknown architecture '" + s + "'");
}

const char* to_string(Lane l) {
    switch (l) {
        case Lane::Fused: return "fused";
        case Lane::EncodePrefill: return "encode_prefill";
        case Lane::Decode: return "decode";
    }
    return "unknown";
}

const char* to_string(StallCause c) {
    return c == StallCause::EncodeBlock ? "encode-block" : "first-token-starvation";
}

void SimConfig::validate() const {
    if (cluster.num_gpus == 0) throw ConfigError("cluster.num_gpus", "must be >= 1");
    if (cluster.engines_per_gpu == 0) throw ConfigError("cluster.engines_per_gpu", "must be >= 1");
    if (cluster.max_decode_tasks == 0) throw ConfigError("cluster.max_decode_tasks", "must be >= 1");
    if (cluster.cpu_decode_workers_per_gpu == 0) throw ConfigError("cluster.cpu_decode_workers_per_gpu", "must be >= 1");
    if (cluster.image_decode_gpu < 0) throw ConfigError("cluster.image_decode_gpu", "must be >= 0");
    if (cluster.image_decode_cpu < 0) throw ConfigError("cluster.image_decode_cpu", "must be >= 0");
    if (cluster.patch_pages == 0) throw ConfigError("cluster.patch_pages", "must be >= 1");
    if (cluster.patch_page_size == 0) throw ConfigError("cluster.patch_page_size", "must be >= 1");
    if (arch.kind == ArchKind::Split) {
        if (arch.ep_gpus == 0) throw ConfigError("arch.ep_gpus", "split pools must be non-empty");
        if (arch.d_gpus == 0) throw ConfigError("arch.d_gpus", "split pools must be non-empty");
        if (arch.ep_gpus + arch.d_gpus > cluster.num_gpus) {
            throw ConfigError("arch.d_gpus", "split pools exceed cluster.num_gpus");
        }
        if (arch.transfer_cost < 0) throw ConfigError("arch.transfer_cost", "must be >= 0");
    }
    scheduler.validate();
    phase.validate();
    interference.validate();
    nvdec.validate();
    cpu.validate();
    if (slo.ttft < 0) throw ConfigError("slo.ttft", "must be >= 0");
    if (slo.tbt < 0) throw ConfigError("slo.tbt", "must be >= 0");
    if (slo.attainment < 0 || slo.attainment > 1) throw ConfigError("slo.attainment", "must be in [0, 1]");
    if (!(stall_k > 0)) throw ConfigError("stall_k", "must be > 0");
    if (!(horizon > 0)) throw ConfigError("horizon", "must be > 0");
}

namespace {

bool uses_nvdec(const SimConfig& cfg, const WorkloadRequest& w) {
    return cfg.arch.kind == ArchKind::Unified && w.gpu_decode;
}

std::uint32_t preprocess_gpus(const SimConfig& cfg) {
    return cfg.arch.kind == ArchKind::Split ? cfg.arch.ep_gpus : cfg.cluster.num_gpus;
}

DecodePlan video_plan(const VideoSource& v, std::uint32_t world, std::uint32_t engines) {
    const auto meta = v.meta();
    const auto sel = select_frames(meta, SelectionPolicy::uniform(v.sampled_frames));
    return make_plan(meta, sel, world, engines, v.temporal_patch);
}

double cpu_video_cost(const SimConfig& cfg, const VideoSource& v) {
    const auto plan = video_plan(v, 1, 1);
    double cost = cfg.cpu.worker_init_serialization;
    for (const auto& seg : plan.ranks.front().segments) cost += estimate_work(seg, plan.codec, plan.resolution, cfg.cpu);
    return cost;
}

/// First-come first-served pool of identical servers.
class ServerPool {
public:
    explicit ServerPool(std::uint32_t servers) {
        for (std::uint32_t i = 0; i < servers; ++i) free_at_.push(0.0);
    }
    double serve(double arrival, double cost) {
        const double start = std::max(arrival, free_at_.top());
        free_at_.pop();
        free_at_.push(start + cost);
        return start + cost;
    }

private:
    std::priority_queue<double, std::vector<double>, std::greater<>> free_at_;
};

/// Completion time of visual decoding for every request.
std::vector<double> preprocess_times(const SimConfig& cfg, const WorkloadTrace& trace, std::uint64_t seed) {
    const auto n = trace.requests.size();
    std::vector<double> done(n, 0.0);
    ServerPool cpu(std::max<std::uint32_t>(1, cfg.cluster.cpu_decode_workers_per_gpu * preprocess_gpus(cfg)));
    ServerPool jpeg(cfg.cluster.num_gpus);
    std::vector<DecodeJob> jobs;
    std::vector<std::size_t> job_index;
    const auto topo = cfg.cluster.nvdec();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& w = trace.requests[i];
        const double arrival = w.request.arrival;
        switch (w.request.modality) {
            case Modality::Text:
                done[i] = arrival;
                break;
            case Modality::Image:
                done[i] = uses_nvdec(cfg, w) ? jpeg.serve(arrival, w.images * cfg.cluster.image_decode_gpu)
                                             : cpu.serve(arrival, w.images * cfg.cluster.image_decode_cpu);
                break;
            case Modality::Video:
                if (uses_nvdec(cfg, w)) {
                    jobs.push_back({i, video_plan(*w.video, topo.num_gpus, topo.engines_per_gpu), arrival});
                    job_index.push_back(i);
                } else {
                    done[i] = cpu.serve(arrival, cpu_video_cost(cfg, *w.video));
                }
                break;
        }
    }
    if (!jobs.empty()) {
        const auto sched = schedule_stall_free(jobs, topo, cfg.nvdec, seed);
        for (auto i : job_index) done[i] = sched.job(i).completion;
    }
    return done;
}

/// Split keeps its KV cache on the decode pool only.
SchedulerConfig scheduler_config(const SimConfig& cfg) {
    SchedulerConfig s = cfg.scheduler;
    if (cfg.arch.kind == ArchKind::Split && cfg.arch.scale_pools) {
        s.kv_pages = std::max<std::uint32_t>(
            1, static_cast<std::uint32_t>(std::uint64_t{s.kv_pages} * cfg.arch.d_gpus / cfg.cluster.num_gpus));
    }
    return s;
}

enum class EvKind { Arrival, Preprocessed, LaneEnd, DecodeEnd, Wake };

struct Ev {
    double time;
    std::uint64_t seq;
    EvKind kind;
    std::size_t index;
    bool operator>(const Ev& o) const { return std::tie(time, seq) > std::tie(o.time, o.seq); }
};

struct PhaseSpan {
    double start;
    double end;
    Phase phase;
    double intensity;
};

class Simulator {
public:
    Simulator(const SimConfig& cfg, const WorkloadTrace& trace, std::uint64_t seed)
        : cfg_(cfg), trace_(trace), sched_(scheduler_config(cfg)),
          patch_(cfg.cluster.patch_page_size, cfg.cluster.patch_pages) {
        cfg_.validate();
        trace_.validate();
        const auto pre = preprocess_times(cfg, trace, seed);
        for (std::size_t i = 0; i < trace.requests.size(); ++i) {
            const auto& r = trace.requests[i].request;
            if (index_.count(r.id)) throw ConfigError("workload", "duplicate request id");
            index_[r.id] = i;
            RequestRecord rec;
            rec.id = r.id;
            rec.modality = r.modality;
            rec.arrival = r.arrival;
            rec.output_tokens = r.output_tokens;
            recs_.push_back(rec);
            push(r.arrival, EvKind::Arrival, i);
            if (r.multimodal()) push(pre[i], EvKind::Preprocessed, i);
        }
        if (cfg.arch.kind == ArchKind::Split && cfg.arch.scale_pools) {
            const double g = cfg.cluster.num_gpus;
            ep_scale_ = g / cfg.arch.ep_gpus;
            decode_seq_scale_ = g / cfg.arch.d_gpus;
        }
        if (cfg.arch.kind == ArchKind::Split) handoff_ = cfg.arch.transfer_cost;
    }

    RunResult run() {
        double now = 0.0;
        while (!events_.empty()) {
            now = events_.top().time;
            if (now > cfg_.horizon) break;
            while (!events_.empty() && events_.top().time == now) {
                const Ev ev = events_.top();
                events_.pop();
                handle(ev);
            }
            start_lanes(now);
            result_.end_time = now;
        }
        result_.arch = cfg_.arch.kind;
        result_.requests = recs_;
        result_.metrics = compute_metrics(recs_, cfg_.slo);
        return std::move(result_);
    }

private:
    void push(double t, EvKind kind, std::size_t index) { events_.push({t, seq_++, kind, index}); }

    const Request& req(std::size_t i) const { return trace_.requests[i].request; }

    void handle(const Ev& ev) {
        switch (ev.kind) {
            case EvKind::Arrival:
                sched_.add(req(ev.index));
                break;
            case EvKind::Preprocessed:
                patch_wait_.push_back(ev.index);
                stage_patches(ev.time);
                break;
            case EvKind::LaneEnd:
                finish_lane(ev.time);
                break;
            case EvKind::DecodeEnd:
                finish_decode(ev.time);
                break;
            case EvKind::Wake:
                wake_pending_ = false;
                break;
        }
    }

    /// Writes decoded patch tokens into the patch buffer, FIFO, as space allows.
    void stage_patches(double now) {
        while (!patch_wait_.empty()) {
            const auto i = patch_wait_.front();
            const auto& r = req(i);
            if (!patch_.can_alloc(r.id, r.patch_tokens)) break;
            patch_wait_.pop_front();
            patch_.alloc_pages(r.id, r.patch_tokens);
            TokenSpan span{r.id, 0, r.patch_tokens, 1, {}};
            span.payload.resize(r.patch_tokens);
            for (std::uint64_t k = 0; k < r.patch_tokens; ++k) span.payload[k] = visual_token_word(~r.id, k);
            const std::pair<RequestId, std::uint64_t> batch{r.id, r.patch_tokens};
            patch_.write_chunk(span, patch_.plan_write(std::span(&batch, 1)));
            patch_.seal(r.id);
            recs_[i].preprocess_done = now;
            sched_.mark_preprocessed(r.id);
        }
    }

    void start_lanes(double now) {
        if (!lane_busy_) start_lane(now);
        if (cfg_.arch.kind != ArchKind::Monolithic && !decode_busy_) start_decode(now);
    }

    double encode_cost(std::uint64_t tokens, std::size_t decode_batch) const {
        double f = 1.0;
        if (cfg_.arch.kind == ArchKind::Unified) {
            f = cfg_.interference.factor(Phase::Encode, static_cast<double>(tokens), Phase::Decode,
                                         static_cast<double>(decode_batch));
        }
        return cfg_.phase.encode(static_cast<double>(tokens)) * ep_scale_ * f;
    }

    void start_lane(double now) {
        const bool fused = cfg_.arch.kind == ArchKind::Monolithic;
        IterationPlan plan = sched_.schedule();
        const std::vector<RequestId>* batch = nullptr;
        if (fused) batch = &decoder_.begin_iteration(now);
        const std::size_t bs = batch ? batch->size() : 0;
        if (plan.empty() && bs == 0) return;

        // Decode lane load seen by encode/prefill at iteration start.
        const std::size_t co_batch = cfg_.arch.kind == ArchKind::Unified && decode_busy_ ? decode_batch_ : 0;

        IterationRecord rec;
        rec.lane = fused ? Lane::Fused : Lane::EncodePrefill;
        rec.start = now;
        rec.n_e = plan.n_e;
        rec.n_p = plan.n_p;
        rec.decode_batch = bs;
        rec.encode = plan.encode;
        rec.prefill = plan.prefill;

        phases_.clear();
        double t = now;
        for (auto chunk : plan.encode_chunks) {
            const double d = encode_cost(chunk, co_batch);
            phases_.push_back({t, t + d, Phase::Encode, static_cast<double>(chunk)});
            t += d;
        }
        rec.encode_time = t - now;
        if (rec.encode_time > 0) result_.encode_intervals.push_back({now, t});
        double fp = 1.0;
        if (cfg_.arch.kind == ArchKind::Unified && plan.n_p > 0) {
            fp = cfg_.interference.factor(Phase::Prefill, static_cast<double>(plan.n_p), Phase::Decode,
                                          static_cast<double>(co_batch));
        }
        rec.prefill_time = cfg_.phase.prefill(static_cast<double>(plan.n_p)) * ep_scale_ * fp;
        if (plan.n_p > 0) phases_.push_back({t, t + rec.prefill_time, Phase::Prefill, static_cast<double>(plan.n_p)});
        rec.decode_time = cfg_.phase.decode(bs);
        const double end = t + rec.prefill_time + rec.decode_time;
        if (bs > 0) result_.decode_intervals.push_back({t, end});
        rec.end = end;
        lane_rec_ = std::move(rec);
        lane_plan_ = std::move(plan);
        lane_busy_ = true;
        encode_end_ = now + lane_rec_.encode_time;
        push(end, EvKind::LaneEnd, 0);
    }

    void emit_decode_tokens(double now) {
        for (auto id : decoder_.batch()) recs_[index_.at(id)].token_times.push_back(now);
        for (auto id : decoder_.finish_iteration()) finish_request(id, now);
    }

    void finish_request(RequestId id, double now) {
        auto& r = recs_[index_.at(id)];
        r.completed = true;
        sched_.release(id);
        (void)now;
    }

    void finish_lane(double now) {
        lane_busy_ = false;
        phases_.clear();
        if (lane_rec_.lane == Lane::Fused) emit_decode_tokens(now);
        for (const auto& item : lane_plan_.encode) {
            // The encoder consumed the request's patch tokens.
            const std::uint64_t n = patch_.written(item.id);
            const std::pair<RequestId, std::uint64_t> batch{item.id, n};
            patch_.read_chunk(item.id, 0, n, patch_.plan_read(std::span(&batch, 1)));
            patch_.release(item.id);
            recs_[index_.at(item.id)].encode_done = encode_end_;
        }
        for (auto id : sched_.complete(lane_plan_)) {
            auto& r = recs_[index_.at(id)];
            r.prefill_done = now;
            r.first_token = now;
            r.token_times.push_back(now);
            if (r.output_tokens == 1) {
                finish_request(id, now);
            } else {
                decoder_.enqueue(id, r.output_tokens - 1, now + handoff_);
            }
        }
        result_.iterations.push_back(std::move(lane_rec_));
        stage_patches(now);
    }

    void start_decode(double now) {
        const auto& batch = decoder_.begin_iteration(now);
        if (batch.empty()) {
            if (auto t = decoder_.next_eligible(); t && !wake_pending_) {
                wake_pending_ = true;
                push(*t, EvKind::Wake, 0);
            }
            return;
        }
        IterationRecord rec;
        rec.lane = Lane::Decode;
        rec.start = now;
        rec.decode_batch = batch.size();
        std::vector<Aggressor> aggressors;
        if (cfg_.arch.kind == ArchKind::Unified && lane_busy_) {
            for (const auto& p : phases_) {
                if (p.start <= now && now < p.end) aggressors.push_back({p.phase, p.intensity});
            }
        }
        const double base = cfg_.phase.decode_base + cfg_.phase.decode_per_seq * decode_seq_scale_ *
                                                         static_cast<double>(batch.size());
        double factor = 1.0;
        if (cfg_.arch.kind == ArchKind::Unified) {
            factor = cfg_.interference.factor(Phase::Decode, static_cast<double>(batch.size()), aggressors);
        }
        rec.decode_factor = factor;
        rec.decode_time = base * factor;
        rec.end = now + rec.decode_time;
        result_.decode_intervals.push_back({now, rec.end});
        decode_batch_ = batch.size();
        decode_busy_ = true;
        result_.iterations.push_back(rec);
        push(rec.end, EvKind::DecodeEnd, 0);
    }

    void finish_decode(double now) {
        decode_busy_ = false;
        decode_batch_ = 0;
        emit_decode_tokens(now);
    }

    const SimConfig& cfg_;
    const WorkloadTrace& trace_;
    PrefillEncodeScheduler sched_;
    DecodeBatcher decoder_;
    EmbedBuffer patch_;
    std::map<RequestId, std::size_t> index_;
    std::vector<RequestRecord> recs_;
    std::priority_queue<Ev, std::vector<Ev>, std::greater<>> events_;
    std::uint64_t seq_ = 0;
    std::deque<std::size_t> patch_wait_;

    double ep_scale_ = 1.0;
    double decode_seq_scale_ = 1.0;
    double handoff_ = 0.0;

    bool lane_busy_ = false;
    IterationPlan lane_plan_;
    IterationRecord lane_rec_;
    std::vector<PhaseSpan> phases_;
    double encode_end_ = 0.0;

    bool decode_busy_ = false;
    std::size_t decode_batch_ = 0;
    bool wake_pending_ = false;

    RunResult result_;
};

}  // namespace

RunResult run(const SimConfig& cfg, const WorkloadTrace& trace, std::uint64_t seed) {
    return Simulator(cfg, trace, seed).run();
}

MetricsLog compute_metrics(const std::vector<RequestRecord>& requests, const SloConfig& slo) {
    MetricsLog log;
    std::vector<double> ttft;
    std::vector<double> e2e;
    double first_arrival = std::numeric_limits<double>::infinity();
    double last_completion = 0.0;
    std::uint64_t tokens = 0;
    std::size_t meeting = 0;
    for (const auto& r : requests) {
        first_arrival = std::min(first_arrival, r.arrival);
        RequestMetrics m;
        m.id = r.id;
        m.completed = r.completed;
        m.tokens = r.token_times.size();
        if (r.completed) {
            m.ttft = r.first_token - r.arrival;
            m.e2e = r.token_times.back() - r.arrival;
            for (std::size_t k = 1; k < r.token_times.size(); ++k) {
                log.tbt_samples.push_back(r.token_times[k] - r.token_times[k - 1]);
            }
            if (r.token_times.size() > 1) {
                m.mean_tbt = (r.token_times.back() - r.token_times.front()) /
                             static_cast<double>(r.token_times.size() - 1);
            }
            m.meets_slo = m.ttft <= slo.ttft && m.mean_tbt <= slo.tbt;
            ttft.push_back(m.ttft);
            e2e.push_back(m.e2e);
            tokens += m.tokens;
            last_completion = std::max(last_completion, r.token_times.back());
            ++log.completed;
        } else {
            ++log.in_flight;
        }
        if (m.meets_slo) ++meeting;
        log.requests.push_back(m);
    }
    log.ttft = summarize(ttft);
    log.e2e = summarize(e2e);
    log.tbt = summarize(log.tbt_samples);
    if (log.completed > 0 && last_completion > first_arrival) {
        const double span = last_completion - first_arrival;
        log.throughput_tokens = static_cast<double>(tokens) / span;
        log.throughput_requests = static_cast<double>(log.completed) / span;
    }
    log.slo_attainment = requests.empty() ? 1.0 : static_cast<double>(meeting) / static_cast<double>(requests.size());
    return log;
}

std::vector<Stall> stall_report(const RunResult& result, double k) {
    std::vector<Stall> stalls;
    if (result.requests.empty()) return stalls;
    std::vector<double> emits;
    for (const auto& r : result.requests) emits.insert(emits.end(), r.token_times.begin(), r.token_times.end());
    std::sort(emits.begin(), emits.end());
    std::vector<double> tbt = result.metrics.tbt_samples;
    std::sort(tbt.begin(), tbt.end());
    const double median = percentile(tbt, 50);
    if (!(median > 0)) return stalls;
    const double limit = k * median;

    // Timeline points: first arrival, every emission, and the end of the run.
    double first_arrival = result.requests.front().arrival;
    for (const auto& r : result.requests) first_arrival = std::min(first_arrival, r.arrival);
    std::vector<double> points{first_arrival};
    points.insert(points.end(), emits.begin(), emits.end());
    points.push_back(std::max(result.end_time, points.back()));

    auto done_at = [](const RequestRecord& r) {
        return r.completed ? r.token_times.back() : std::numeric_limits<double>::infinity();
    };
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double a = points[i - 1];
        const double b = points[i];
        if (b - a <= limit) continue;
        // Demand begins at the earliest instant in [a, b) with an unfinished request.
        double d = std::numeric_limits<double>::infinity();
        for (const auto& r : result.requests) {
            if (r.arrival < b && done_at(r) > a) d = std::min(d, std::max(a, r.arrival));
        }
        if (!(d < b) || b - d <= limit) continue;
        bool decoding = false;
        for (const auto& r : result.requests) {
            if (r.first_token >= 0 && r.first_token <= d && done_at(r) > d) decoding = true;
        }
        bool encoding = false;
        for (const auto& e : result.encode_intervals) {
            if (e.start < b && e.end > d) encoding = true;
        }
        stalls.push_back({d, b, decoding && encoding ? StallCause::EncodeBlock : StallCause::FirstTokenStarvation});
    }
    return stalls;
}

double total_stall_time(const std::vector<Stall>& stalls) {
    double t = 0.0;
    for (const auto& s : stalls) t += s.length();
    return t;
}

double ideal_service_time(const SimConfig& cfg, const WorkloadTrace& trace) {
    if (trace.requests.empty()) return 0.0;
    double slowest = 0.0;
    const auto topo = cfg.cluster.nvdec();
    for (const auto& w : trace.requests) {
        const auto& r = w.request;
        double pre = 0.0;
        if (r.modality == Modality::Video) {
            if (uses_nvdec(cfg, w)) {
                DecodeJob job{0, video_plan(*w.video, topo.num_gpus, topo.engines_per_gpu), 0.0};
                pre = schedule_stall_free(std::span(&job, 1), topo, cfg.nvdec).makespan;
            } else {
                pre = cpu_video_cost(cfg, *w.video);
            }
        } else if (r.modality == Modality::Image) {
            pre = w.images * (uses_nvdec(cfg, w) ? cfg.cluster.image_decode_gpu : cfg.cluster.image_decode_cpu);
        }
        const double t = pre + cfg.phase.encode(static_cast<double>(r.patch_tokens)) +
                         cfg.phase.prefill(static_cast<double>(r.prompt_tokens())) +
                         static_cast<double>(r.output_tokens) * cfg.phase.decode(1);
        slowest = std::max(slowest, t);
    }
    return trace.last_arrival() - trace.first_arrival() + slowest;
}

std::string token_csv(const RunResult& result) {
    std::string out = "request,token,time\n";
    char line[96];
    for (const auto& r : result.requests) {
        for (std::size_t k = 0; k < r.token_times.size(); ++k) {
            std::snprintf(line, sizeof line, "%llu,%zu,%.9f\n", static_cast<unsigned long long>(r.id), k,
                          r.token_times[k]);
            out += line;
        }
    }
    return out;
}

}  // namespace mmsim
