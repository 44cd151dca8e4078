#include "mmsim/config.hpp"

#include <fstream>
#include <set>

#include "mmsim/errors.hpp"

namespace mmsim {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

/// Object reader that records which keys were consumed.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_, "expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }
    std::string path(const char* key) const { return join(path_, key); }

    const json* child(const char* key) {
        used_.insert(key);
        return j_.contains(key) ? &j_[key] : nullptr;
    }

    void get(const char* key, double& out) {
        if (const auto* v = child(key)) {
            if (!v->is_number()) throw ConfigError(path(key), "expected a number");
            out = v->get<double>();
        }
    }
    void get(const char* key, bool& out) {
        if (const auto* v = child(key)) {
            if (!v->is_boolean()) throw ConfigError(path(key), "expected a boolean");
            out = v->get<bool>();
        }
    }
    void get(const char* key, std::string& out) {
        if (const auto* v = child(key)) {
            if (!v->is_string()) throw ConfigError(path(key), "expected a string");
            out = v->get<std::string>();
        }
    }
    void get(const char* key, std::uint64_t& out) {
        if (const auto* v = child(key)) {
            if (!non_negative_integer(*v)) throw ConfigError(path(key), "expected a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void get(const char* key, std::uint32_t& out) {
        std::uint64_t wide = out;
        get(key, wide);
        if (wide > 0xffffffffull) throw ConfigError(path(key), "value out of range");
        out = static_cast<std::uint32_t>(wide);
    }

    /// Throws on any key not consumed by get/child.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!used_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <typename Fn>
auto wrap(const std::string& path, Fn fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ConfigError(path, e.message());
    } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
    }
}

ResolutionClass resolution_from_string(const std::string& s, const std::string& path) {
    for (auto rc : {ResolutionClass::SD, ResolutionClass::HD720, ResolutionClass::FHD1080, ResolutionClass::UHD}) {
        if (s == to_string(rc)) return rc;
    }
    throw ConfigError(path, "unknown resolution class '" + s + "'");
}

std::vector<double> number_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back(j[i].get<double>());
    }
    return out;
}

const char* grid_key(Phase victim, Phase aggressor) {
    if (victim == Phase::Decode && aggressor == Phase::Prefill) return "decode_by_prefill";
    if (victim == Phase::Decode && aggressor == Phase::Encode) return "decode_by_encode";
    if (victim == Phase::Prefill && aggressor == Phase::Decode) return "prefill_by_decode";
    if (victim == Phase::Encode && aggressor == Phase::Decode) return "encode_by_decode";
    return nullptr;
}

constexpr std::pair<Phase, Phase> kGridPairs[] = {{Phase::Decode, Phase::Prefill},
                                                  {Phase::Decode, Phase::Encode},
                                                  {Phase::Prefill, Phase::Decode},
                                                  {Phase::Encode, Phase::Decode}};

PresetSpec parse_preset(const json& j, const std::string& path, PresetSpec p) {
    Section s(j, path);
    std::string modality = to_string(p.modality);
    s.get("modality", modality);
    if (modality == "text") {
        p.modality = Modality::Text;
    } else if (modality == "image") {
        p.modality = Modality::Image;
    } else if (modality == "video") {
        p.modality = Modality::Video;
    } else {
        throw ConfigError(s.path("modality"), "unknown modality '" + modality + "'");
    }
    s.get("min_duration_s", p.min_duration_s);
    s.get("max_duration_s", p.max_duration_s);
    s.get("fps", p.fps);
    s.get("gop", p.gop);
    std::string codec = to_string(p.codec);
    s.get("codec", codec);
    p.codec = wrap(s.path("codec"), [&] { return codec_from_string(codec); });
    s.get("width", p.width);
    s.get("height", p.height);
    s.get("sampled_frames", p.sampled_frames);
    s.get("temporal_patch", p.temporal_patch);
    s.get("images_per_request", p.images_per_request);
    s.get("patch_tokens_per_frame", p.patch_tokens_per_frame);
    s.get("visual_tokens_per_frame", p.visual_tokens_per_frame);
    s.get("min_text_tokens", p.min_text_tokens);
    s.get("max_text_tokens", p.max_text_tokens);
    s.get("min_output_tokens", p.min_output_tokens);
    s.get("max_output_tokens", p.max_output_tokens);
    s.get("gpu_decode", p.gpu_decode);
    s.finish();
    return p;
}

SelectionPolicy parse_selection(const json& j, const std::string& path) {
    Section s(j, path);
    int kinds = 0;
    SelectionPolicy out;
    if (s.has("uniform")) {
        std::uint32_t n = 0;
        s.get("uniform", n);
        out = SelectionPolicy::uniform(n);
        ++kinds;
    }
    if (s.has("fps")) {
        double r = 0;
        s.get("fps", r);
        out = SelectionPolicy::at_fps(r);
        ++kinds;
    }
    if (s.has("indices")) {
        const auto* v = s.child("indices");
        if (!v->is_array()) throw ConfigError(s.path("indices"), "expected an array");
        std::vector<std::uint32_t> idx;
        for (std::size_t i = 0; i < v->size(); ++i) {
            if (!non_negative_integer((*v)[i])) {
                throw ConfigError(s.path("indices") + "[" + std::to_string(i) + "]", "expected a frame index");
            }
            idx.push_back((*v)[i].get<std::uint32_t>());
        }
        out = SelectionPolicy::explicit_list(std::move(idx));
        ++kinds;
    }
    s.finish();
    if (kinds != 1) throw ConfigError(path, "give exactly one of uniform, fps, indices");
    return out;
}

}  // namespace

std::vector<double> default_rate_ladder() {
    std::vector<double> r;
    for (int i = 1; i <= 30; ++i) r.push_back(i / 20.0);
    return r;
}

DecodeCostModel parse_decode_cost(const json& j, const std::string& path, DecodeCostModel m) {
    Section s(j, path);
    if (const auto* v = s.child("per_frame_cost")) {
        Section codecs(*v, s.path("per_frame_cost"));
        for (auto it = v->begin(); it != v->end(); ++it) {
            const auto cpath = join(s.path("per_frame_cost"), it.key());
            const Codec codec = wrap(cpath, [&] { return codec_from_string(it.key()); });
            codecs.child(it.key().c_str());
            if (!it->is_object()) throw ConfigError(cpath, "expected an object");
            for (auto r = it->begin(); r != it->end(); ++r) {
                const auto rpath = join(cpath, r.key());
                if (!r->is_number()) throw ConfigError(rpath, "expected a number");
                m.per_frame_cost[{codec, resolution_from_string(r.key(), rpath)}] = r->get<double>();
            }
        }
        codecs.finish();
    }
    if (const auto* v = s.child("seek_cost")) {
        if (!v->is_object()) throw ConfigError(s.path("seek_cost"), "expected an object");
        for (auto it = v->begin(); it != v->end(); ++it) {
            const auto cpath = join(s.path("seek_cost"), it.key());
            if (!it->is_number()) throw ConfigError(cpath, "expected a number");
            m.seek_cost[wrap(cpath, [&] { return codec_from_string(it.key()); })] = it->get<double>();
        }
    }
    s.get("engine_init_cost", m.engine_init_cost);
    s.get("worker_init_serialization", m.worker_init_serialization);
    s.get("jitter", m.jitter);
    s.get("default_frame_cost", m.default_frame_cost);
    s.finish();
    return m;
}

InterferenceTable parse_interference(const json& j, const std::string& path) {
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name == "default") return InterferenceTable::defaults();
        if (name == "none") return InterferenceTable::none();
        throw ConfigError(path, "unknown interference table '" + name + "'");
    }
    Section s(j, path);
    std::string base = "none";
    s.get("base", base);
    InterferenceTable t = base == "default" ? InterferenceTable::defaults() : InterferenceTable::none();
    if (base != "default" && base != "none") throw ConfigError(s.path("base"), "expected 'default' or 'none'");
    for (auto [victim, aggressor] : kGridPairs) {
        const char* key = grid_key(victim, aggressor);
        const auto* g = s.child(key);
        if (!g) continue;
        Section gs(*g, s.path(key));
        InterferenceGrid grid;
        grid.victim_axis = number_list(*gs.child("victim_axis"), gs.path("victim_axis"));
        grid.aggressor_axis = number_list(*gs.child("aggressor_axis"), gs.path("aggressor_axis"));
        const auto* f = gs.child("factors");
        if (!f || !f->is_array()) throw ConfigError(gs.path("factors"), "expected an array of rows");
        for (std::size_t i = 0; i < f->size(); ++i) {
            grid.factors.push_back(number_list((*f)[i], gs.path("factors") + "[" + std::to_string(i) + "]"));
        }
        gs.finish();
        t.set(victim, aggressor, std::move(grid));
    }
    s.finish();
    return t;
}

RunConfig parse_config(const json& j) {
    RunConfig c;
    Section root(j, "");
    root.get("seed", c.seed);

    if (const auto* v = root.child("cluster")) {
        Section s(*v, "cluster");
        auto& k = c.sim.cluster;
        s.get("num_gpus", k.num_gpus);
        s.get("engines_per_gpu", k.engines_per_gpu);
        s.get("max_decode_tasks", k.max_decode_tasks);
        s.get("cpu_decode_workers_per_gpu", k.cpu_decode_workers_per_gpu);
        s.get("image_decode_gpu", k.image_decode_gpu);
        s.get("image_decode_cpu", k.image_decode_cpu);
        s.get("patch_pages", k.patch_pages);
        s.get("patch_page_size", k.patch_page_size);
        s.finish();
    }
    if (const auto* v = root.child("arch")) {
        Section s(*v, "arch");
        auto& a = c.sim.arch;
        std::string kind = to_string(a.kind);
        s.get("kind", kind);
        a.kind = wrap(s.path("kind"), [&] { return arch_from_string(kind); });
        s.get("ep_gpus", a.ep_gpus);
        s.get("d_gpus", a.d_gpus);
        s.get("transfer_cost", a.transfer_cost);
        s.get("scale_pools", a.scale_pools);
        s.finish();
    }
    if (const auto* v = root.child("scheduler")) {
        Section s(*v, "scheduler");
        auto& k = c.sim.scheduler;
        s.get("p_token_budget", k.p_token_budget);
        s.get("e_token_budget", k.e_token_budget);
        s.get("t_max", k.t_max);
        s.get("tbt_slo", k.tbt_slo);
        s.get("kv_pages", k.kv_pages);
        s.get("kv_page_size", k.kv_page_size);
        s.get("visual_pages", k.visual_pages);
        s.get("visual_page_size", k.visual_page_size);
        s.finish();
    }
    if (const auto* v = root.child("phase_cost")) {
        Section s(*v, "phase_cost");
        auto& p = c.sim.phase;
        s.get("prefill_per_token", p.prefill_per_token);
        s.get("encode_per_patch_token", p.encode_per_patch_token);
        s.get("decode_base", p.decode_base);
        s.get("decode_per_seq", p.decode_per_seq);
        s.finish();
    }
    if (const auto* v = root.child("interference")) c.sim.interference = parse_interference(*v, "interference");
    if (const auto* v = root.child("decode_cost")) {
        Section s(*v, "decode_cost");
        if (const auto* n = s.child("nvdec")) c.sim.nvdec = parse_decode_cost(*n, s.path("nvdec"), c.sim.nvdec);
        if (const auto* n = s.child("cpu")) c.sim.cpu = parse_decode_cost(*n, s.path("cpu"), c.sim.cpu);
        s.finish();
    }
    if (const auto* v = root.child("slo")) {
        Section s(*v, "slo");
        s.get("ttft", c.sim.slo.ttft);
        s.get("tbt", c.sim.slo.tbt);
        s.get("attainment", c.sim.slo.attainment);
        s.finish();
    }
    root.get("stall_k", c.sim.stall_k);
    if (const auto* v = root.child("workload")) {
        Section s(*v, "workload");
        std::string preset = c.workload.preset.name;
        s.get("preset", preset);
        c.workload.preset = wrap(s.path("preset"), [&] { return PresetSpec::named(preset); });
        if (const auto* o = s.child("overrides")) c.workload.preset = parse_preset(*o, s.path("overrides"), c.workload.preset);
        std::string arrivals = c.workload.arrivals == ArrivalProcess::Poisson ? "poisson" : "fixed";
        s.get("arrivals", arrivals);
        if (arrivals == "poisson") {
            c.workload.arrivals = ArrivalProcess::Poisson;
        } else if (arrivals == "fixed") {
            c.workload.arrivals = ArrivalProcess::Fixed;
        } else {
            throw ConfigError(s.path("arrivals"), "expected 'poisson' or 'fixed'");
        }
        s.get("rate", c.workload.rate);
        s.get("num_requests", c.workload.num_requests);
        s.get("file", c.workload_file);
        s.finish();
    }
    if (const auto* v = root.child("plan")) {
        Section s(*v, "plan");
        s.get("world_size", c.plan.world_size);
        s.get("num_engines", c.plan.num_engines);
        s.get("temporal_patch", c.plan.temporal_patch);
        if (const auto* sel = s.child("selection")) c.plan.selection = parse_selection(*sel, s.path("selection"));
        s.finish();
        if (c.plan.world_size == 0) throw ConfigError("plan.world_size", "must be >= 1");
        if (c.plan.num_engines == 0) throw ConfigError("plan.num_engines", "must be >= 1");
        if (c.plan.temporal_patch == 0) throw ConfigError("plan.temporal_patch", "must be >= 1");
    }
    if (const auto* v = root.child("decode_sim")) {
        Section s(*v, "decode_sim");
        std::string policy = c.decode_sim.policy == DecodePolicy::StallFree ? "stall_free" : "whole_video";
        s.get("policy", policy);
        if (policy == "stall_free") {
            c.decode_sim.policy = DecodePolicy::StallFree;
        } else if (policy == "whole_video") {
            c.decode_sim.policy = DecodePolicy::WholeVideo;
        } else {
            throw ConfigError(s.path("policy"), "expected 'stall_free' or 'whole_video'");
        }
        std::string memory = c.decode_sim.memory == MemoryPolicy::Preallocate ? "preallocate" : "deferred";
        s.get("memory_policy", memory);
        if (memory == "preallocate") {
            c.decode_sim.memory = MemoryPolicy::Preallocate;
        } else if (memory == "deferred") {
            c.decode_sim.memory = MemoryPolicy::DeferredPerRank;
        } else {
            throw ConfigError(s.path("memory_policy"), "expected 'preallocate' or 'deferred'");
        }
        s.get("num_gpus", c.decode_sim.topology.num_gpus);
        s.get("engines_per_gpu", c.decode_sim.topology.engines_per_gpu);
        s.get("max_decode_tasks", c.decode_sim.topology.max_decode_tasks);
        s.get("arrival_gap", c.decode_sim.arrival_gap);
        s.get("handoff_delay", c.decode_sim.handoff_delay);
        s.finish();
        wrap("decode_sim", [&] {
            c.decode_sim.topology.validate();
            return 0;
        });
    }
    if (const auto* v = root.child("sweep")) {
        Section s(*v, "sweep");
        if (const auto* r = s.child("rates")) c.sweep.rates = number_list(*r, s.path("rates"));
        if (const auto* a = s.child("archs")) {
            if (!a->is_array()) throw ConfigError(s.path("archs"), "expected an array");
            c.sweep.archs.clear();
            for (std::size_t i = 0; i < a->size(); ++i) {
                const auto p = s.path("archs") + "[" + std::to_string(i) + "]";
                if (!(*a)[i].is_string()) throw ConfigError(p, "expected a string");
                c.sweep.archs.push_back(wrap(p, [&] { return arch_from_string((*a)[i].get<std::string>()); }));
            }
        }
        s.get("parallel", c.sweep.parallel);
        s.get("num_requests", c.sweep.num_requests);
        s.finish();
        if (c.sweep.num_requests == 0) throw ConfigError("sweep.num_requests", "must be >= 1");
    }
    root.finish();
    if (c.sweep.rates.empty()) c.sweep.rates = default_rate_ladder();
    c.sim.validate();
    c.workload.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

nlohmann::ordered_json to_json(const DecodeCostModel& m) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json per_frame = nlohmann::ordered_json::object();
    for (const auto& [key, v] : m.per_frame_cost) per_frame[to_string(key.first)][to_string(key.second)] = v;
    nlohmann::ordered_json seek = nlohmann::ordered_json::object();
    for (const auto& [codec, v] : m.seek_cost) seek[to_string(codec)] = v;
    j["per_frame_cost"] = per_frame;
    j["seek_cost"] = seek;
    j["engine_init_cost"] = m.engine_init_cost;
    j["worker_init_serialization"] = m.worker_init_serialization;
    j["jitter"] = m.jitter;
    j["default_frame_cost"] = m.default_frame_cost;
    return j;
}

nlohmann::ordered_json to_json(const InterferenceTable& t) {
    nlohmann::ordered_json j;
    j["base"] = "none";
    for (auto [victim, aggressor] : kGridPairs) {
        const auto* g = t.grid(victim, aggressor);
        if (!g) continue;
        j[grid_key(victim, aggressor)] = {
            {"victim_axis", g->victim_axis}, {"aggressor_axis", g->aggressor_axis}, {"factors", g->factors}};
    }
    return j;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    const auto& k = c.sim.cluster;
    j["cluster"] = {{"num_gpus", k.num_gpus},
                    {"engines_per_gpu", k.engines_per_gpu},
                    {"max_decode_tasks", k.max_decode_tasks},
                    {"cpu_decode_workers_per_gpu", k.cpu_decode_workers_per_gpu},
                    {"image_decode_gpu", k.image_decode_gpu},
                    {"image_decode_cpu", k.image_decode_cpu},
                    {"patch_pages", k.patch_pages},
                    {"patch_page_size", k.patch_page_size}};
    const auto& a = c.sim.arch;
    j["arch"] = {{"kind", to_string(a.kind)},
                 {"ep_gpus", a.ep_gpus},
                 {"d_gpus", a.d_gpus},
                 {"transfer_cost", a.transfer_cost},
                 {"scale_pools", a.scale_pools}};
    const auto& s = c.sim.scheduler;
    j["scheduler"] = {{"p_token_budget", s.p_token_budget}, {"e_token_budget", s.e_token_budget},
                      {"t_max", s.t_max},                   {"tbt_slo", s.tbt_slo},
                      {"kv_pages", s.kv_pages},             {"kv_page_size", s.kv_page_size},
                      {"visual_pages", s.visual_pages},     {"visual_page_size", s.visual_page_size}};
    const auto& p = c.sim.phase;
    j["phase_cost"] = {{"prefill_per_token", p.prefill_per_token},
                       {"encode_per_patch_token", p.encode_per_patch_token},
                       {"decode_base", p.decode_base},
                       {"decode_per_seq", p.decode_per_seq}};
    j["interference"] = to_json(c.sim.interference);
    j["decode_cost"] = {{"nvdec", to_json(c.sim.nvdec)}, {"cpu", to_json(c.sim.cpu)}};
    j["slo"] = {{"ttft", c.sim.slo.ttft}, {"tbt", c.sim.slo.tbt}, {"attainment", c.sim.slo.attainment}};
    j["stall_k"] = c.sim.stall_k;
    const auto& w = c.workload;
    const auto& pr = w.preset;
    nlohmann::ordered_json wj;
    wj["preset"] = pr.name;
    wj["overrides"] = {{"modality", to_string(pr.modality)},
                       {"min_duration_s", pr.min_duration_s},
                       {"max_duration_s", pr.max_duration_s},
                       {"fps", pr.fps},
                       {"gop", pr.gop},
                       {"codec", to_string(pr.codec)},
                       {"width", pr.width},
                       {"height", pr.height},
                       {"sampled_frames", pr.sampled_frames},
                       {"temporal_patch", pr.temporal_patch},
                       {"images_per_request", pr.images_per_request},
                       {"patch_tokens_per_frame", pr.patch_tokens_per_frame},
                       {"visual_tokens_per_frame", pr.visual_tokens_per_frame},
                       {"min_text_tokens", pr.min_text_tokens},
                       {"max_text_tokens", pr.max_text_tokens},
                       {"min_output_tokens", pr.min_output_tokens},
                       {"max_output_tokens", pr.max_output_tokens},
                       {"gpu_decode", pr.gpu_decode}};
    wj["arrivals"] = w.arrivals == ArrivalProcess::Poisson ? "poisson" : "fixed";
    wj["rate"] = w.rate;
    wj["num_requests"] = w.num_requests;
    if (!c.workload_file.empty()) wj["file"] = c.workload_file;
    j["workload"] = wj;
    nlohmann::ordered_json sel;
    switch (c.plan.selection.kind) {
        case SelectionPolicy::Kind::UniformCount: sel["uniform"] = c.plan.selection.count; break;
        case SelectionPolicy::Kind::Fps: sel["fps"] = c.plan.selection.fps; break;
        case SelectionPolicy::Kind::Explicit: sel["indices"] = c.plan.selection.indices; break;
    }
    j["plan"] = {{"world_size", c.plan.world_size},
                 {"num_engines", c.plan.num_engines},
                 {"temporal_patch", c.plan.temporal_patch},
                 {"selection", sel}};
    const auto& d = c.decode_sim;
    j["decode_sim"] = {{"policy", d.policy == DecodePolicy::StallFree ? "stall_free" : "whole_video"},
                       {"memory_policy", d.memory == MemoryPolicy::Preallocate ? "preallocate" : "deferred"},
                       {"num_gpus", d.topology.num_gpus},
                       {"engines_per_gpu", d.topology.engines_per_gpu},
                       {"max_decode_tasks", d.topology.max_decode_tasks},
                       {"arrival_gap", d.arrival_gap},
                       {"handoff_delay", d.handoff_delay}};
    std::vector<std::string> archs;
    for (auto arch : c.sweep.archs) archs.emplace_back(to_string(arch));
    j["sweep"] = {{"rates", c.sweep.rates}, {"archs", archs}, {"parallel", c.sweep.parallel},
                 {"num_requests", c.sweep.num_requests}};
    return j;
}

}  // namespace mmsim
