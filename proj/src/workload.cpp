#include "mmsim/workload.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmsim/errors.hpp"

namespace mmsim {

VideoMeta VideoSource::meta() const {
    SyntheticVideoSpec spec;
    spec.num_frames = static_cast<std::uint32_t>(std::llround(duration_s * fps));
    spec.gop_sizes = {gop};
    spec.fps = fps;
    spec.codec = codec;
    spec.width = width;
    spec.height = height;
    return synthesize_meta(spec);
}

void WorkloadTrace::validate() const {
    for (std::size_t i = 0; i < requests.size(); ++i) {
        const auto path = "workload[" + std::to_string(i) + "]";
        if (i > 0 && requests[i].request.arrival < requests[i - 1].request.arrival) {
            throw ConfigError(path + ".arrival", "arrivals must be non-decreasing");
        }
        try {
            requests[i].request.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(path, e.what());
        }
        if (requests[i].request.modality == Modality::Video && !requests[i].video) {
            throw ConfigError(path + ".video", "video request without a source");
        }
    }
}

PresetSpec PresetSpec::named(const std::string& name) {
    PresetSpec p;
    if (name == "long-video") return p;
    if (name == "short-video") {
        p.name = name;
        p.min_duration_s = 170.0;
        p.max_duration_s = 190.0;
        p.sampled_frames = 128;
        p.gpu_decode = false;
        return p;
    }
    if (name == "image") {
        p.name = name;
        p.modality = Modality::Image;
        p.min_duration_s = p.max_duration_s = 0.0;
        p.images_per_request = 1;
        p.min_text_tokens = 32;
        p.max_text_tokens = 256;
        return p;
    }
    if (name == "text") {
        p.name = name;
        p.modality = Modality::Text;
        p.min_duration_s = p.max_duration_s = 0.0;
        p.min_text_tokens = 256;
        p.max_text_tokens = 2048;
        return p;
    }
    throw ConfigError("workload.preset", "unknown preset '" + name + "'");
}

void PresetSpec::validate() const {
    if (modality == Modality::Video) {
        if (!(min_duration_s > 0) || max_duration_s < min_duration_s) {
            throw ConfigError("workload.preset.duration", "need 0 < min <= max");
        }
        if (!(fps > 0)) throw ConfigError("workload.preset.fps", "must be > 0");
        if (gop == 0) throw ConfigError("workload.preset.gop", "must be >= 1");
        if (sampled_frames == 0) throw ConfigError("workload.preset.sampled_frames", "must be >= 1");
        if (temporal_patch == 0) throw ConfigError("workload.preset.temporal_patch", "must be >= 1");
    }
    if (modality == Modality::Image && images_per_request == 0) {
        throw ConfigError("workload.preset.images_per_request", "must be >= 1");
    }
    if (visual_tokens_per_frame > patch_tokens_per_frame) {
        throw ConfigError("workload.preset.visual_tokens_per_frame", "exceeds patch tokens per frame");
    }
    if (max_text_tokens < min_text_tokens) throw ConfigError("workload.preset.max_text_tokens", "below minimum");
    if (min_output_tokens == 0 || max_output_tokens < min_output_tokens) {
        throw ConfigError("workload.preset.output_tokens", "need 1 <= min <= max");
    }
}

void WorkloadConfig::validate() const {
    preset.validate();
    if (!(rate > 0)) throw ConfigError("workload.rate", "must be > 0");
}

Request make_request(std::uint64_t id, double arrival, Modality modality, std::uint64_t text_tokens,
                     std::uint64_t output_tokens, const std::optional<VideoSource>& video, std::uint32_t images,
                     std::uint32_t patch_per_frame, std::uint32_t visual_per_frame) {
    Request r;
    r.id = id;
    r.arrival = arrival;
    r.modality = modality;
    r.text_tokens = text_tokens;
    r.output_tokens = output_tokens;
    if (modality == Modality::Video && video) {
        const auto total = static_cast<std::uint64_t>(std::llround(video->duration_s * video->fps));
        const std::uint64_t frames = std::min<std::uint64_t>(video->sampled_frames, total);
        const std::uint64_t t = video->temporal_patch;
        const std::uint64_t units = (frames + t - 1) / t;
        r.encode_units.assign(units, t * patch_per_frame);
        r.patch_tokens = units * t * patch_per_frame;
        r.visual_tokens = units * t * visual_per_frame;
    } else if (modality == Modality::Image) {
        r.encode_units.assign(images, patch_per_frame);
        r.patch_tokens = std::uint64_t{images} * patch_per_frame;
        r.visual_tokens = std::uint64_t{images} * visual_per_frame;
    }
    return r;
}

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_int(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) {
    const auto span = static_cast<double>(hi - lo + 1);
    return lo + std::min(hi - lo, static_cast<std::uint64_t>(unit(rng) * span));
}

}  // namespace

WorkloadTrace generate_workload(const WorkloadConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto& p = cfg.preset;
    std::mt19937_64 rng(seed);
    WorkloadTrace trace;
    double t = 0.0;
    for (std::uint32_t i = 0; i < cfg.num_requests; ++i) {
        if (i > 0) {
            t += cfg.arrivals == ArrivalProcess::Fixed ? 1.0 / cfg.rate : -std::log1p(-unit(rng)) / cfg.rate;
        }
        WorkloadRequest w;
        w.gpu_decode = p.gpu_decode;
        if (p.modality == Modality::Video) {
            VideoSource v;
            v.duration_s = p.min_duration_s + (p.max_duration_s - p.min_duration_s) * unit(rng);
            v.fps = p.fps;
            v.gop = p.gop;
            v.codec = p.codec;
            v.width = p.width;
            v.height = p.height;
            v.sampled_frames = p.sampled_frames;
            v.temporal_patch = p.temporal_patch;
            w.video = v;
        } else if (p.modality == Modality::Image) {
            w.images = p.images_per_request;
        }
        const auto text = uniform_int(rng, p.min_text_tokens, p.max_text_tokens);
        const auto out = uniform_int(rng, p.min_output_tokens, p.max_output_tokens);
        w.request = make_request(i, t, p.modality, text, out, w.video, w.images, p.patch_tokens_per_frame,
                                 p.visual_tokens_per_frame);
        trace.requests.push_back(std::move(w));
    }
    return trace;
}

namespace {

Modality modality_from(const std::string& s, const std::string& path) {
    if (s == "text") return Modality::Text;
    if (s == "image") return Modality::Image;
    if (s == "video") return Modality::Video;
    throw ConfigError(path, "unknown modality '" + s + "'");
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& path) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (auto k : keys) ok = ok || it.key() == k;
        if (!ok) throw ConfigError(path + "." + it.key(), "unknown key");
    }
}

}  // namespace

WorkloadTrace load_workload_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("workload.file", "cannot open '" + path + "'");
    WorkloadTrace trace;
    std::string line;
    std::uint64_t id = 0;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "workload[" + std::to_string(lineno) + "]";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(where, e.what());
        }
        try {
            reject_unknown(j,
                           {"arrival", "modality", "text_tokens", "output_tokens", "video", "images",
                            "gpu_decode", "patch_tokens_per_frame", "visual_tokens_per_frame"},
                           where);
            WorkloadRequest w;
            const double arrival = j.at("arrival").get<double>();
            const auto modality = modality_from(j.at("modality").get<std::string>(), where + ".modality");
            w.gpu_decode = j.value("gpu_decode", true);
            if (j.contains("video")) {
                const auto& v = j["video"];
                reject_unknown(v,
                               {"duration_s", "fps", "gop", "codec", "width", "height", "sampled_frames",
                                "temporal_patch"},
                               where + ".video");
                VideoSource src;
                src.duration_s = v.at("duration_s").get<double>();
                src.fps = v.value("fps", src.fps);
                src.gop = v.value("gop", src.gop);
                src.codec = codec_from_string(v.value("codec", std::string("h264")));
                src.width = v.value("width", src.width);
                src.height = v.value("height", src.height);
                src.sampled_frames = v.value("sampled_frames", src.sampled_frames);
                src.temporal_patch = v.value("temporal_patch", src.temporal_patch);
                w.video = src;
            }
            w.images = j.value("images", modality == Modality::Image ? 1u : 0u);
            w.request = make_request(id++, arrival, modality, j.value("text_tokens", std::uint64_t{64}),
                                     j.value("output_tokens", std::uint64_t{128}), w.video, w.images,
                                     j.value("patch_tokens_per_frame", 128u), j.value("visual_tokens_per_frame", 32u));
            trace.requests.push_back(std::move(w));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where, e.what());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(where, e.what());
        }
    }
    trace.validate();
    return trace;
}

std::string workload_jsonl(const WorkloadTrace& trace) {
    std::ostringstream out;
    for (const auto& w : trace.requests) {
        nlohmann::ordered_json j;
        j["arrival"] = w.request.arrival;
        j["modality"] = to_string(w.request.modality);
        j["text_tokens"] = w.request.text_tokens;
        j["output_tokens"] = w.request.output_tokens;
        j["gpu_decode"] = w.gpu_decode;
        if (w.video) {
            j["video"] = {{"duration_s", w.video->duration_s}, {"fps", w.video->fps},
                          {"gop", w.video->gop},               {"codec", to_string(w.video->codec)},
                          {"width", w.video->width},           {"height", w.video->height},
                          {"sampled_frames", w.video->sampled_frames},
                          {"temporal_patch", w.video->temporal_patch}};
        }
        if (w.images > 0) j["images"] = w.images;
        out << j.dump() << '\n';
    }
    return out.str();
}

}  // namespace mmsim
