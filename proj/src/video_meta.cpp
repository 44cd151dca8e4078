#include "mmsim/video_meta.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mmsim/errors.hpp"

namespace mmsim {

const char* to_string(Codec codec) {
    switch (codec) {
        case Codec::H264: return "h264";
        case Codec::H265: return "h265";
        case Codec::VP9: return "vp9";
        case Codec::Other: return "other";
    }
    return "other";
}

Codec codec_from_string(const std::string& name) {
    if (name == "h264") return Codec::H264;
    if (name == "h265") return Codec::H265;
    if (name == "vp9") return Codec::VP9;
    if (name == "other") return Codec::Other;
    throw std::invalid_argument("unknown codec '" + name + "'");
}

const char* to_string(ResolutionClass rc) {
    switch (rc) {
        case ResolutionClass::SD: return "sd";
        case ResolutionClass::HD720: return "720p";
        case ResolutionClass::FHD1080: return "1080p";
        case ResolutionClass::UHD: return "uhd";
    }
    return "sd";
}

ResolutionClass resolution_class(std::uint32_t width, std::uint32_t height) {
    const auto lines = std::min(width, height);
    if (lines <= 576) return ResolutionClass::SD;
    if (lines <= 720) return ResolutionClass::HD720;
    if (lines <= 1080) return ResolutionClass::FHD1080;
    return ResolutionClass::UHD;
}

const char* to_string(ContainerError::Kind kind) {
    switch (kind) {
        case ContainerError::Kind::MalformedBox: return "MalformedBox";
        case ContainerError::Kind::NoVideoTrack: return "NoVideoTrack";
        case ContainerError::Kind::UnsupportedFeature: return "UnsupportedFeature";
    }
    return "ContainerError";
}

const char* to_string(BufferError::Kind kind) {
    switch (kind) {
        case BufferError::Kind::OutOfPages: return "OutOfPages";
        case BufferError::Kind::GapError: return "GapError";
        case BufferError::Kind::CapacityError: return "CapacityError";
        case BufferError::Kind::UnwrittenRange: return "UnwrittenRange";
        case BufferError::Kind::OutOfOrderRead: return "OutOfOrderRead";
        case BufferError::Kind::UseAfterFree: return "UseAfterFree";
        case BufferError::Kind::UnknownRequest: return "UnknownRequest";
        case BufferError::Kind::PartialSubmission: return "PartialSubmission";
    }
    return "BufferError";
}

std::pair<std::uint32_t, std::uint32_t> VideoMeta::gop_range(std::size_t g) const {
    const auto begin = keyframe_indices.at(g);
    const auto end = g + 1 < keyframe_indices.size()
                         ? keyframe_indices[g + 1]
                         : static_cast<std::uint32_t>(frame_pts.size());
    return {begin, end};
}

std::size_t VideoMeta::gop_of(std::uint32_t frame) const {
    auto it = std::upper_bound(keyframe_indices.begin(), keyframe_indices.end(), frame);
    if (it == keyframe_indices.begin()) {
        throw std::out_of_range("frame precedes the first keyframe");
    }
    return static_cast<std::size_t>(it - keyframe_indices.begin()) - 1;
}

std::vector<std::uint32_t> VideoMeta::gop_sizes() const {
    std::vector<std::uint32_t> sizes;
    sizes.reserve(keyframe_indices.size());
    for (std::size_t g = 0; g < keyframe_indices.size(); ++g) {
        auto [b, e] = gop_range(g);
        sizes.push_back(e - b);
    }
    return sizes;
}

double VideoMeta::fps() const {
    if (frame_pts.size() < 2 || timescale == 0) return 0.0;
    const double span = static_cast<double>(frame_pts.back() - frame_pts.front()) / timescale;
    return span > 0 ? static_cast<double>(frame_pts.size() - 1) / span : 0.0;
}

double VideoMeta::duration() const {
    if (frame_pts.empty() || timescale == 0) return 0.0;
    const double span = static_cast<double>(frame_pts.back() - frame_pts.front()) / timescale;
    const double rate = fps();
    return span + (rate > 0 ? 1.0 / rate : 0.0);
}

void VideoMeta::validate() const {
    if (frame_pts.empty()) throw std::invalid_argument("video has no frames");
    if (timescale == 0) throw std::invalid_argument("timescale is zero");
    for (std::size_t i = 1; i < frame_pts.size(); ++i) {
        if (frame_pts[i] <= frame_pts[i - 1]) {
            throw std::invalid_argument("frame_pts not strictly increasing at " + std::to_string(i));
        }
    }
    if (keyframe_indices.empty() || keyframe_indices.front() != 0) {
        throw std::invalid_argument("keyframe_indices must start with frame 0");
    }
    for (std::size_t i = 0; i < keyframe_indices.size(); ++i) {
        if (keyframe_indices[i] >= frame_pts.size()) {
            throw std::invalid_argument("keyframe index out of range");
        }
        if (i > 0 && keyframe_indices[i] <= keyframe_indices[i - 1]) {
            throw std::invalid_argument("keyframe_indices not strictly increasing");
        }
    }
}

VideoMeta synthesize_meta(const SyntheticVideoSpec& spec) {
    if (spec.num_frames < 1) throw PlanError(PlanError::Kind::InvalidArgument, "num_frames must be >= 1");
    if (spec.gop_sizes.empty()) throw PlanError(PlanError::Kind::InvalidArgument, "gop_sizes is empty");
    for (auto g : spec.gop_sizes) {
        if (g < 1) throw PlanError(PlanError::Kind::InvalidArgument, "gop sizes must be >= 1");
    }
    if (!(spec.fps > 0)) throw PlanError(PlanError::Kind::InvalidArgument, "fps must be positive");
    if (spec.timescale / spec.fps < 1.0) {
        throw PlanError(PlanError::Kind::InvalidArgument, "timescale too coarse for fps");
    }

    VideoMeta meta;
    meta.codec = spec.codec;
    meta.timescale = spec.timescale;
    meta.width = spec.width;
    meta.height = spec.height;
    meta.frame_pts.resize(spec.num_frames);
    const double ticks_per_frame = static_cast<double>(spec.timescale) / spec.fps;
    for (std::uint32_t i = 0; i < spec.num_frames; ++i) {
        meta.frame_pts[i] = std::llround(i * ticks_per_frame);
    }
    std::uint32_t start = 0;
    for (std::size_t g = 0; start < spec.num_frames; ++g) {
        meta.keyframe_indices.push_back(start);
        start += spec.gop_sizes[g % spec.gop_sizes.size()];
    }
    return meta;
}

}  // namespace mmsim
