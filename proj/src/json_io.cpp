#include "mmsim/json_io.hpp"

#include <algorithm>

#include "mmsim/errors.hpp"

namespace mmsim {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(path + "." + key, "missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key, e.what());
    }
}

ResolutionClass resolution_from_string(const std::string& s) {
    for (auto rc : {ResolutionClass::SD, ResolutionClass::HD720, ResolutionClass::FHD1080, ResolutionClass::UHD}) {
        if (s == to_string(rc)) return rc;
    }
    throw ConfigError("resolution", "unknown resolution class '" + s + "'");
}

const char* policy_name(SelectionPolicy::Kind k) {
    switch (k) {
        case SelectionPolicy::Kind::UniformCount: return "uniform";
        case SelectionPolicy::Kind::Fps: return "fps";
        case SelectionPolicy::Kind::Explicit: return "explicit";
    }
    return "?";
}

ojson to_json(const GopSegment& s) {
    ojson spans = ojson::array();
    for (const auto& d : s.decode_span) {
        spans.push_back({{"gop", d.gop}, {"first_frame", d.first_frame}, {"last_frame", d.last_frame}});
    }
    return {{"first_gop", s.first_gop}, {"last_gop", s.last_gop},     {"targets", s.targets},
            {"target_pts", s.target_pts}, {"decode_span", spans},     {"est_work", s.est_work},
            {"seek_count", s.seek_count}};
}

GopSegment segment_from_json(const json& j, const std::string& path) {
    GopSegment s;
    s.first_gop = field<std::uint32_t>(j, "first_gop", path);
    s.last_gop = field<std::uint32_t>(j, "last_gop", path);
    s.targets = field<std::vector<std::uint32_t>>(j, "targets", path);
    s.target_pts = field<std::vector<std::int64_t>>(j, "target_pts", path);
    const auto spans = field<json>(j, "decode_span", path);
    if (!spans.is_array()) throw ConfigError(path + ".decode_span", "expected an array");
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto p = path + ".decode_span[" + std::to_string(i) + "]";
        s.decode_span.push_back({field<std::uint32_t>(spans[i], "gop", p), field<std::uint32_t>(spans[i], "first_frame", p),
                                 field<std::uint32_t>(spans[i], "last_frame", p)});
    }
    s.est_work = field<std::uint64_t>(j, "est_work", path);
    s.seek_count = field<std::uint32_t>(j, "seek_count", path);
    return s;
}

}  // namespace

ojson to_json(const VideoMeta& meta) {
    return {{"codec", to_string(meta.codec)},
            {"timescale", meta.timescale},
            {"width", meta.width},
            {"height", meta.height},
            {"frame_count", meta.frame_count()},
            {"gop_count", meta.gop_count()},
            {"duration_s", meta.duration()},
            {"fps", meta.fps()},
            {"pts", meta.frame_pts},
            {"keyframe_indices", meta.keyframe_indices}};
}

VideoMeta video_meta_from_json(const json& j) {
    VideoMeta m;
    const std::string path = "meta";
    try {
        m.codec = codec_from_string(field<std::string>(j, "codec", path));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path + ".codec", e.what());
    }
    m.timescale = field<std::uint32_t>(j, "timescale", path);
    m.width = field<std::uint32_t>(j, "width", path);
    m.height = field<std::uint32_t>(j, "height", path);
    m.frame_pts = field<std::vector<std::int64_t>>(j, "pts", path);
    m.keyframe_indices = field<std::vector<std::uint32_t>>(j, "keyframe_indices", path);
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    return m;
}

ojson to_json(const FrameSelection& sel) {
    ojson policy = {{"kind", policy_name(sel.policy.kind)}};
    switch (sel.policy.kind) {
        case SelectionPolicy::Kind::UniformCount: policy["count"] = sel.policy.count; break;
        case SelectionPolicy::Kind::Fps: policy["fps"] = sel.policy.fps; break;
        case SelectionPolicy::Kind::Explicit: break;
    }
    return {{"policy", policy}, {"target_indices", sel.target_indices}};
}

ojson to_json(const DecodePlan& plan) {
    ojson ranks = ojson::array();
    for (const auto& r : plan.ranks) {
        ojson segs = ojson::array();
        for (const auto& s : r.segments) segs.push_back(to_json(s));
        ranks.push_back({{"segments", segs},
                         {"padding_frames", r.padding_frames},
                         {"target_count", r.target_count()},
                         {"emitted_frames", r.emitted_frames()},
                         {"decode_work", r.decode_work()}});
    }
    return {{"world_size", plan.world_size},
            {"num_engines", plan.num_engines},
            {"temporal_patch", plan.temporal_patch},
            {"codec", to_string(plan.codec)},
            {"resolution", to_string(plan.resolution)},
            {"effective_world_size", plan.effective_world_size},
            {"merged_ranks", plan.merged_ranks},
            {"total_emitted", plan.total_emitted()},
            {"total_work", plan.total_work()},
            {"max_segment_work", plan.max_segment_work()},
            {"ranks", ranks}};
}

DecodePlan decode_plan_from_json(const json& j) {
    const std::string path = "plan";
    DecodePlan p;
    p.world_size = field<std::uint32_t>(j, "world_size", path);
    p.num_engines = field<std::uint32_t>(j, "num_engines", path);
    p.temporal_patch = field<std::uint32_t>(j, "temporal_patch", path);
    try {
        p.codec = codec_from_string(field<std::string>(j, "codec", path));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path + ".codec", e.what());
    }
    p.resolution = resolution_from_string(field<std::string>(j, "resolution", path));
    p.effective_world_size = field<std::uint32_t>(j, "effective_world_size", path);
    p.merged_ranks = field<std::vector<std::uint32_t>>(j, "merged_ranks", path);
    const auto ranks = field<json>(j, "ranks", path);
    if (!ranks.is_array()) throw ConfigError(path + ".ranks", "expected an array");
    for (std::size_t r = 0; r < ranks.size(); ++r) {
        const auto rp = path + ".ranks[" + std::to_string(r) + "]";
        RankShare share;
        share.padding_frames = field<std::uint32_t>(ranks[r], "padding_frames", rp);
        const auto segs = field<json>(ranks[r], "segments", rp);
        if (!segs.is_array()) throw ConfigError(rp + ".segments", "expected an array");
        for (std::size_t s = 0; s < segs.size(); ++s) {
            share.segments.push_back(segment_from_json(segs[s], rp + ".segments[" + std::to_string(s) + "]"));
        }
        p.ranks.push_back(std::move(share));
    }
    return p;
}

ojson schedule_summary(const ScheduleTrace& trace, const EngineTopology& topo, const std::vector<MemoryPeak>& memory) {
    ojson jobs = ojson::array();
    for (const auto& j : trace.jobs) {
        jobs.push_back({{"job", j.job}, {"arrival", j.arrival}, {"completion", j.completion},
                        {"latency", j.completion - j.arrival}});
    }
    ojson mem = ojson::array();
    for (const auto& m : memory) mem.push_back({{"gpu", m.gpu}, {"peak_frames", m.peak_frames}, {"peak_time", m.peak_time}});
    const auto util = trace.utilization();
    double mean_util = 0.0;
    for (double u : util) mean_util += u;
    if (!util.empty()) mean_util /= static_cast<double>(util.size());
    return {{"num_gpus", topo.num_gpus},
            {"engines_per_gpu", topo.engines_per_gpu},
            {"max_decode_tasks", topo.max_decode_tasks},
            {"makespan", trace.makespan},
            {"mean_engine_utilization", mean_util},
            {"engine_utilization", util},
            {"jobs", jobs},
            {"memory_peaks", mem}};
}

ojson to_json(const Summary& s) {
    return {{"count", s.count}, {"mean", s.mean}, {"p50", s.p50}, {"p90", s.p90},
            {"p95", s.p95},     {"p99", s.p99},   {"max", s.max}};
}

ojson to_json(const MetricsLog& m, bool per_request) {
    ojson j = {{"completed", m.completed},
               {"in_flight", m.in_flight},
               {"throughput_tokens_per_s", m.throughput_tokens},
               {"throughput_requests_per_s", m.throughput_requests},
               {"slo_attainment", m.slo_attainment},
               {"ttft", to_json(m.ttft)},
               {"tbt", to_json(m.tbt)},
               {"e2e", to_json(m.e2e)}};
    if (per_request) {
        ojson reqs = ojson::array();
        for (const auto& r : m.requests) {
            reqs.push_back({{"id", r.id},       {"completed", r.completed}, {"ttft", r.ttft},
                            {"mean_tbt", r.mean_tbt}, {"e2e", r.e2e},         {"tokens", r.tokens},
                            {"meets_slo", r.meets_slo}});
        }
        j["requests"] = reqs;
    }
    return j;
}

ojson run_summary(const RunResult& r, const std::vector<Stall>& stalls) {
    ojson st = ojson::array();
    for (const auto& s : stalls) st.push_back({{"start", s.start}, {"end", s.end}, {"cause", to_string(s.cause)}});
    return {{"arch", to_string(r.arch)},
            {"end_time", r.end_time},
            {"iterations", r.iterations.size()},
            {"metrics", to_json(r.metrics, true)},
            {"total_stall_time", total_stall_time(stalls)},
            {"stalls", st}};
}

ojson to_json(const std::vector<CapacityRow>& rows) {
    ojson out = ojson::array();
    for (const auto& row : rows) {
        ojson pts = ojson::array();
        for (const auto& p : row.evaluated) pts.push_back({{"rate", p.rate}, {"attainment", p.attainment}, {"meets", p.meets}});
        out.push_back({{"arch", to_string(row.arch)}, {"capacity", row.capacity}, {"evaluated", pts}});
    }
    return out;
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

}  // namespace mmsim
