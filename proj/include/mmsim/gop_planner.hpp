#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmsim/decode_cost.hpp"
#include "mmsim/video_meta.hpp"

namespace mmsim {

struct SelectionPolicy {
    enum class Kind { UniformCount, Fps, Explicit };

    Kind kind = Kind::UniformCount;
    std::uint32_t count = 0;
    double fps = 0.0;
    std::vector<std::uint32_t> indices;

    static SelectionPolicy uniform(std::uint32_t n) { return {Kind::UniformCount, n, 0.0, {}}; }
    static SelectionPolicy at_fps(double r) { return {Kind::Fps, 0, r, {}}; }
    static SelectionPolicy explicit_list(std::vector<std::uint32_t> idx) {
        return {Kind::Explicit, 0, 0.0, std::move(idx)};
    }
};

struct FrameSelection {
    std::vector<std::uint32_t> target_indices;
    SelectionPolicy policy;
};

/// Inclusive range of frames one engine decodes inside a single GOP.
struct GopSpan {
    std::uint32_t gop = 0;
    std::uint32_t first_frame = 0;
    std::uint32_t last_frame = 0;

    std::uint64_t frames() const { return std::uint64_t{last_frame} - first_frame + 1; }
    bool operator==(const GopSpan&) const = default;
};

/// A contiguous run of GOPs decoded by one engine. `targets` are frame
/// indices in presentation order, `target_pts` their timestamps.
struct GopSegment {
    std::uint32_t first_gop = 0;
    std::uint32_t last_gop = 0;
    std::vector<std::uint32_t> targets;
    std::vector<std::int64_t> target_pts;
    std::vector<GopSpan> decode_span;
    std::uint64_t est_work = 0;
    std::uint32_t seek_count = 0;

    bool operator==(const GopSegment&) const = default;
};

struct RankShare {
    std::vector<GopSegment> segments;
    std::uint32_t padding_frames = 0;

    std::uint64_t target_count() const;
    std::uint64_t emitted_frames() const { return target_count() + padding_frames; }
    std::uint64_t decode_work() const;

    bool operator==(const RankShare&) const = default;
};

struct DecodePlan {
    std::uint32_t world_size = 1;
    std::uint32_t num_engines = 1;
    std::uint32_t temporal_patch = 1;
    Codec codec = Codec::Other;
    ResolutionClass resolution = ResolutionClass::SD;
    std::vector<RankShare> ranks;
    /// Ranks left with work after partitioning and alignment.
    std::uint32_t effective_world_size = 0;
    /// Ranks absorbed into their predecessor because alignment drained them.
    std::vector<std::uint32_t> merged_ranks;

    std::uint32_t padding_frames() const;
    std::uint64_t total_emitted() const;
    std::uint64_t total_work() const;
    std::uint64_t max_segment_work() const;
    std::size_t segment_count() const;

    bool operator==(const DecodePlan&) const = default;
};

/// Deterministic target-frame selection. Throws PlanError.
FrameSelection select_frames(const VideoMeta& meta, const SelectionPolicy& policy);

/// Builds the segment covering targets (sorted frame indices) with the
/// codec's decode-span rule: H.264 decodes continuously from the first
/// keyframe after a single seek, other codecs seek to every GOP holding a
/// target and stop at its last target.
GopSegment build_segment(const VideoMeta& meta, std::span<const std::uint32_t> targets);

/// Splits the selection into world_size * num_engines GOP-aligned segments
/// minimising the largest frames-to-decode count, then deals them out to
/// ranks in order. No temporal alignment is applied.
DecodePlan partition(const VideoMeta& meta, const FrameSelection& sel,
                     std::uint32_t world_size, std::uint32_t num_engines);

/// Rounds each non-final rank's emitted frames up to a multiple of
/// `temporal_patch` by pulling the next rank's earliest targets, then pads
/// the final rank with repeats of the last frame.
DecodePlan align_to_temporal_patch(const VideoMeta& meta, DecodePlan plan,
                                   std::uint32_t temporal_patch);

/// partition followed by align_to_temporal_patch.
DecodePlan make_plan(const VideoMeta& meta, const FrameSelection& sel, std::uint32_t world_size,
                     std::uint32_t num_engines, std::uint32_t temporal_patch);

/// Simulated seconds to decode `seg` on one engine.
double estimate_work(const GopSegment& seg, Codec codec, ResolutionClass rc,
                     const DecodeCostModel& model);

}  // namespace mmsim
