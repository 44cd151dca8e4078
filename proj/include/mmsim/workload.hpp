#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmsim/orchestrator.hpp"
#include "mmsim/video_meta.hpp"

namespace mmsim {

/// Source video of a video request; frames are sampled uniformly.
struct VideoSource {
    double duration_s = 60.0;
    double fps = 30.0;
    std::uint32_t gop = 250;
    Codec codec = Codec::H264;
    std::uint32_t width = 1280;
    std::uint32_t height = 720;
    std::uint32_t sampled_frames = 256;
    std::uint32_t temporal_patch = 2;

    VideoMeta meta() const;
    bool operator==(const VideoSource&) const = default;
};

struct WorkloadRequest {
    Request request;
    std::optional<VideoSource> video;
    std::uint32_t images = 0;
    /// Decode on NVDEC engines (video) or hardware JPEG (images) when the
    /// architecture supports it; otherwise on CPU workers.
    bool gpu_decode = true;

    bool operator==(const WorkloadRequest& o) const {
        return request.id == o.request.id && request.arrival == o.request.arrival && video == o.video &&
               images == o.images && gpu_decode == o.gpu_decode;
    }
};

struct WorkloadTrace {
    std::vector<WorkloadRequest> requests;

    double first_arrival() const { return requests.empty() ? 0.0 : requests.front().request.arrival; }
    double last_arrival() const { return requests.empty() ? 0.0 : requests.back().request.arrival; }
    /// Throws ConfigError if arrivals decrease or a request is inconsistent.
    void validate() const;
};

/// Statistics of one request population.
struct PresetSpec {
    std::string name = "long-video";
    Modality modality = Modality::Video;
    double min_duration_s = 480.0;
    double max_duration_s = 600.0;
    double fps = 30.0;
    std::uint32_t gop = 250;
    Codec codec = Codec::H264;
    std::uint32_t width = 1280;
    std::uint32_t height = 720;
    std::uint32_t sampled_frames = 256;
    std::uint32_t temporal_patch = 2;
    std::uint32_t images_per_request = 1;
    std::uint32_t patch_tokens_per_frame = 128;
    std::uint32_t visual_tokens_per_frame = 32;
    std::uint32_t min_text_tokens = 32;
    std::uint32_t max_text_tokens = 128;
    std::uint32_t min_output_tokens = 64;
    std::uint32_t max_output_tokens = 192;
    bool gpu_decode = true;

    static PresetSpec named(const std::string& name);
    void validate() const;
    bool operator==(const PresetSpec&) const = default;
};

enum class ArrivalProcess { Poisson, Fixed };

struct WorkloadConfig {
    PresetSpec preset;
    ArrivalProcess arrivals = ArrivalProcess::Poisson;
    double rate = 1.0;
    std::uint32_t num_requests = 80;

    void validate() const;
    bool operator==(const WorkloadConfig&) const = default;
};

/// Deterministic for a given (config, seed) on every platform: sampling
/// uses mt19937_64 words directly, not std distributions.
WorkloadTrace generate_workload(const WorkloadConfig& cfg, std::uint64_t seed);

/// Builds the token counts and encode units of a request from its inputs.
Request make_request(std::uint64_t id, double arrival, Modality modality, std::uint64_t text_tokens,
                     std::uint64_t output_tokens, const std::optional<VideoSource>& video, std::uint32_t images,
                     std::uint32_t patch_per_frame, std::uint32_t visual_per_frame);

/// One JSON object per line: arrival, modality, text_tokens, output_tokens,
/// optional video {...} or images, optional patch/visual tokens per frame.
WorkloadTrace load_workload_jsonl(const std::string& path);
std::string workload_jsonl(const WorkloadTrace& trace);

}  // namespace mmsim
