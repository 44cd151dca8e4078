#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mmsim {

enum class Codec { H264, H265, VP9, Other };

const char* to_string(Codec codec);
Codec codec_from_string(const std::string& name);

/// Coarse resolution bucket used to look up per-frame decode costs.
enum class ResolutionClass { SD, HD720, FHD1080, UHD };

const char* to_string(ResolutionClass rc);
ResolutionClass resolution_class(std::uint32_t width, std::uint32_t height);

/// Frame timeline and GOP structure of one video track.
///
/// `frame_pts` is in presentation order. GOP g covers frame indices
/// [keyframe_indices[g], keyframe_indices[g + 1]).
struct VideoMeta {
    Codec codec = Codec::Other;
    std::vector<std::int64_t> frame_pts;
    std::uint32_t timescale = 1;
    std::vector<std::uint32_t> keyframe_indices;
    std::uint32_t width = 0;
    std::uint32_t height = 0;

    std::size_t frame_count() const { return frame_pts.size(); }
    std::size_t gop_count() const { return keyframe_indices.size(); }

    /// Half-open frame range of GOP `g`.
    std::pair<std::uint32_t, std::uint32_t> gop_range(std::size_t g) const;

    /// Index of the GOP containing frame `frame`.
    std::size_t gop_of(std::uint32_t frame) const;

    std::vector<std::uint32_t> gop_sizes() const;

    /// Seconds covered by the track (last PTS plus one nominal frame).
    double duration() const;

    /// Average frame rate derived from the PTS span.
    double fps() const;

    /// Throws std::invalid_argument naming the first violated invariant.
    void validate() const;

    bool operator==(const VideoMeta&) const = default;
};

/// Parameters for a synthetic VideoMeta. `gop_sizes` holds either one fixed
/// size or a per-GOP list; a list is cycled when it covers fewer frames than
/// `num_frames`.
struct SyntheticVideoSpec {
    std::uint32_t num_frames = 1;
    std::vector<std::uint32_t> gop_sizes{1};
    double fps = 30.0;
    Codec codec = Codec::H264;
    std::uint32_t width = 1280;
    std::uint32_t height = 720;
    std::uint32_t timescale = 90000;
};

VideoMeta synthesize_meta(const SyntheticVideoSpec& spec);

}  // namespace mmsim
