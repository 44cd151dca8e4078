#include "mmsim/gop_planner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "mmsim/errors.hpp"

namespace mmsim {

std::uint64_t RankShare::target_count() const {
    std::uint64_t n = 0;
    for (const auto& s : segments) n += s.targets.size();
    return n;
}

std::uint64_t RankShare::decode_work() const {
    std::uint64_t n = 0;
    for (const auto& s : segments) n += s.est_work;
    return n;
}

std::uint32_t DecodePlan::padding_frames() const {
    std::uint32_t pad = 0;
    for (const auto& r : ranks) pad += r.padding_frames;
    return pad;
}

std::uint64_t DecodePlan::total_emitted() const {
    std::uint64_t n = 0;
    for (const auto& r : ranks) n += r.emitted_frames();
    return n;
}

std::uint64_t DecodePlan::total_work() const {
    std::uint64_t n = 0;
    for (const auto& r : ranks) n += r.decode_work();
    return n;
}

std::uint64_t DecodePlan::max_segment_work() const {
    std::uint64_t m = 0;
    for (const auto& r : ranks) {
        for (const auto& s : r.segments) m = std::max(m, s.est_work);
    }
    return m;
}

std::size_t DecodePlan::segment_count() const {
    std::size_t n = 0;
    for (const auto& r : ranks) n += r.segments.size();
    return n;
}

FrameSelection select_frames(const VideoMeta& meta, const SelectionPolicy& policy) {
    const auto m = static_cast<std::uint32_t>(meta.frame_count());
    FrameSelection sel;
    sel.policy = policy;
    auto& out = sel.target_indices;

    switch (policy.kind) {
        case SelectionPolicy::Kind::UniformCount: {
            if (policy.count == 0) throw PlanError(PlanError::Kind::EmptySelection, "UniformCount(0)");
            if (m == 0) throw PlanError(PlanError::Kind::EmptySelection, "video has no frames");
            const std::uint64_t n = std::min<std::uint64_t>(policy.count, m);
            if (n == 1) {
                out.push_back(0);
                break;
            }
            // Endpoints included; i * (m - 1) / (n - 1) rounded half down.
            const std::uint64_t den = n - 1;
            for (std::uint64_t i = 0; i < n; ++i) {
                const std::uint64_t num = i * (m - 1);
                const std::uint64_t q = num / den;
                const std::uint64_t r = num % den;
                out.push_back(static_cast<std::uint32_t>(q + (2 * r > den ? 1 : 0)));
            }
            break;
        }
        case SelectionPolicy::Kind::Fps: {
            if (!(policy.fps > 0)) throw PlanError(PlanError::Kind::InvalidArgument, "fps must be positive");
            if (m == 0) throw PlanError(PlanError::Kind::EmptySelection, "video has no frames");
            const double step = static_cast<double>(meta.timescale) / policy.fps;
            const double eps = 1e-9 * static_cast<double>(meta.timescale);
            const auto first = static_cast<double>(meta.frame_pts.front());
            const auto last = static_cast<double>(meta.frame_pts.back());
            for (std::uint64_t k = 0;; ++k) {
                const double target = first + static_cast<double>(k) * step;
                if (target > last + eps) break;
                auto it = std::lower_bound(meta.frame_pts.begin(), meta.frame_pts.end(), target - eps,
                                           [](std::int64_t p, double t) { return static_cast<double>(p) < t; });
                if (it == meta.frame_pts.end()) break;
                const auto idx = static_cast<std::uint32_t>(it - meta.frame_pts.begin());
                if (out.empty() || idx > out.back()) out.push_back(idx);
            }
            break;
        }
        case SelectionPolicy::Kind::Explicit: {
            for (std::size_t i = 0; i < policy.indices.size(); ++i) {
                const auto idx = policy.indices[i];
                if (idx >= m) {
                    throw PlanError(PlanError::Kind::InvalidSelection,
                                    "frame index " + std::to_string(idx) + " out of range");
                }
                if (i > 0 && idx <= policy.indices[i - 1]) {
                    throw PlanError(PlanError::Kind::InvalidSelection, "explicit indices must be strictly increasing");
                }
            }
            out = policy.indices;
            break;
        }
    }
    if (out.empty()) throw PlanError(PlanError::Kind::EmptySelection, "selection yielded no frames");
    return sel;
}

GopSegment build_segment(const VideoMeta& meta, std::span<const std::uint32_t> targets) {
    GopSegment seg;
    if (targets.empty()) return seg;
    seg.targets.assign(targets.begin(), targets.end());
    seg.target_pts.reserve(targets.size());
    for (auto f : targets) seg.target_pts.push_back(meta.frame_pts.at(f));

    const auto first_gop = static_cast<std::uint32_t>(meta.gop_of(targets.front()));
    const auto last_gop = static_cast<std::uint32_t>(meta.gop_of(targets.back()));
    seg.first_gop = first_gop;
    seg.last_gop = last_gop;

    if (meta.codec == Codec::H264) {
        // One seek, then every frame up to the last target is decoded.
        for (auto g = first_gop; g <= last_gop; ++g) {
            auto [b, e] = meta.gop_range(g);
            const auto last = g == last_gop ? targets.back() : e - 1;
            seg.decode_span.push_back({g, b, last});
        }
        seg.seek_count = 1;
    } else {
        std::size_t i = 0;
        while (i < targets.size()) {
            const auto g = static_cast<std::uint32_t>(meta.gop_of(targets[i]));
            const auto end = meta.gop_range(g).second;
            std::size_t j = i;
            while (j + 1 < targets.size() && targets[j + 1] < end) ++j;
            seg.decode_span.push_back({g, meta.keyframe_indices[g], targets[j]});
            i = j + 1;
        }
        seg.seek_count = static_cast<std::uint32_t>(seg.decode_span.size());
    }
    for (const auto& s : seg.decode_span) seg.est_work += s.frames();
    return seg;
}

namespace {

/// Targets grouped by the GOP that holds them.
struct GopUnit {
    std::uint32_t gop;
    std::size_t begin;  // into the selection
    std::size_t end;
};

std::vector<GopUnit> group_by_gop(const VideoMeta& meta, const std::vector<std::uint32_t>& targets) {
    std::vector<GopUnit> units;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto g = static_cast<std::uint32_t>(meta.gop_of(targets[i]));
        if (units.empty() || units.back().gop != g) {
            units.push_back({g, i, i + 1});
        } else {
            units.back().end = i + 1;
        }
    }
    return units;
}

/// Frames-to-decode of units [a, b] as one segment, in O(1).
class SegmentCost {
public:
    SegmentCost(const VideoMeta& meta, const std::vector<std::uint32_t>& targets,
                const std::vector<GopUnit>& units)
        : meta_(meta), targets_(targets), units_(units), prefix_(units.size() + 1, 0) {
        for (std::size_t u = 0; u < units.size(); ++u) {
            prefix_[u + 1] = prefix_[u] + unit_work(u);
        }
    }

    std::uint64_t operator()(std::size_t a, std::size_t b) const {
        if (meta_.codec == Codec::H264) {
            return std::uint64_t{last_target(b)} - meta_.keyframe_indices[units_[a].gop] + 1;
        }
        return prefix_[b + 1] - prefix_[a];
    }

private:
    std::uint32_t last_target(std::size_t u) const { return targets_[units_[u].end - 1]; }
    std::uint64_t unit_work(std::size_t u) const {
        return std::uint64_t{last_target(u)} - meta_.keyframe_indices[units_[u].gop] + 1;
    }

    const VideoMeta& meta_;
    const std::vector<std::uint32_t>& targets_;
    const std::vector<GopUnit>& units_;
    std::vector<std::uint64_t> prefix_;
};

/// Greedy left-to-right packing under `bound`; returns segment end indices
/// (exclusive) or an empty vector if a single unit exceeds the bound.
std::vector<std::size_t> pack(const SegmentCost& cost, std::size_t units, std::uint64_t bound) {
    std::vector<std::size_t> ends;
    std::size_t a = 0;
    while (a < units) {
        if (cost(a, a) > bound) return {};
        std::size_t b = a;
        while (b + 1 < units && cost(a, b + 1) <= bound) ++b;
        ends.push_back(b + 1);
        a = b + 1;
    }
    return ends;
}

}  // namespace

DecodePlan partition(const VideoMeta& meta, const FrameSelection& sel, std::uint32_t world_size,
                     std::uint32_t num_engines) {
    if (world_size == 0 || num_engines == 0) {
        throw PlanError(PlanError::Kind::InvalidArgument, "world_size and num_engines must be >= 1");
    }
    if (sel.target_indices.empty()) throw PlanError(PlanError::Kind::EmptySelection, "empty selection");

    const auto& targets = sel.target_indices;
    const auto units = group_by_gop(meta, targets);
    const SegmentCost cost(meta, targets, units);
    const std::size_t n_units = units.size();
    const std::size_t slots = std::size_t{world_size} * num_engines;

    // Binary search on the largest segment cost.
    std::uint64_t lo = 0;
    for (std::size_t u = 0; u < n_units; ++u) lo = std::max(lo, cost(u, u));
    std::uint64_t hi = cost(0, n_units - 1);
    while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        const auto ends = pack(cost, n_units, mid);
        if (!ends.empty() && ends.size() <= slots) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    std::vector<std::size_t> ends = pack(cost, n_units, lo);

    // Use every available engine: split the costliest multi-GOP segment at
    // its most balanced point until slots or GOPs run out.
    const std::size_t want = std::min(slots, n_units);
    while (ends.size() < want) {
        std::size_t best = ends.size();
        std::uint64_t best_cost = 0;
        for (std::size_t s = 0; s < ends.size(); ++s) {
            const std::size_t a = s == 0 ? 0 : ends[s - 1];
            if (ends[s] - a < 2) continue;
            const auto c = cost(a, ends[s] - 1);
            if (best == ends.size() || c > best_cost) {
                best = s;
                best_cost = c;
            }
        }
        const std::size_t a = best == 0 ? 0 : ends[best - 1];
        const std::size_t b = ends[best];
        std::size_t split = a + 1;
        std::uint64_t split_cost = std::max(cost(a, a), cost(a + 1, b - 1));
        for (std::size_t k = a + 2; k < b; ++k) {
            const auto c = std::max(cost(a, k - 1), cost(k, b - 1));
            if (c < split_cost) {
                split = k;
                split_cost = c;
            }
        }
        ends.insert(ends.begin() + static_cast<std::ptrdiff_t>(best), split);
    }

    std::vector<GopSegment> segments;
    segments.reserve(ends.size());
    for (std::size_t s = 0; s < ends.size(); ++s) {
        const std::size_t a = s == 0 ? 0 : ends[s - 1];
        const auto tb = units[a].begin;
        const auto te = units[ends[s] - 1].end;
        segments.push_back(build_segment(meta, std::span(targets).subspan(tb, te - tb)));
    }

    DecodePlan plan;
    plan.world_size = world_size;
    plan.num_engines = num_engines;
    plan.temporal_patch = 1;
    plan.codec = meta.codec;
    plan.resolution = resolution_class(meta.width, meta.height);

    const std::size_t n_seg = segments.size();
    const std::size_t used = std::min<std::size_t>(world_size, n_seg);
    const std::size_t base = n_seg / used;
    const std::size_t extra = n_seg % used;
    std::size_t next = 0;
    for (std::size_t r = 0; r < used; ++r) {
        RankShare share;
        const std::size_t take = base + (r < extra ? 1 : 0);
        for (std::size_t k = 0; k < take; ++k) share.segments.push_back(std::move(segments[next++]));
        plan.ranks.push_back(std::move(share));
    }
    plan.effective_world_size = static_cast<std::uint32_t>(plan.ranks.size());
    return plan;
}

namespace {

/// Moves the first `count` targets of `from` onto the tail segment of `to`.
void move_head_targets(const VideoMeta& meta, RankShare& to, RankShare& from, std::size_t count) {
    std::vector<std::uint32_t> moved;
    while (moved.size() < count) {
        auto& head = from.segments.front();
        const std::size_t take = std::min(count - moved.size(), head.targets.size());
        moved.insert(moved.end(), head.targets.begin(), head.targets.begin() + static_cast<std::ptrdiff_t>(take));
        if (take == head.targets.size()) {
            from.segments.erase(from.segments.begin());
        } else {
            std::vector<std::uint32_t> rest(head.targets.begin() + static_cast<std::ptrdiff_t>(take), head.targets.end());
            head = build_segment(meta, rest);
        }
    }
    auto& tail = to.segments.back();
    std::vector<std::uint32_t> grown = tail.targets;
    grown.insert(grown.end(), moved.begin(), moved.end());
    tail = build_segment(meta, grown);
}

}  // namespace

DecodePlan align_to_temporal_patch(const VideoMeta& meta, DecodePlan plan, std::uint32_t temporal_patch) {
    if (temporal_patch == 0) throw PlanError(PlanError::Kind::InvalidArgument, "temporal patch must be >= 1");
    plan.temporal_patch = temporal_patch;
    for (auto& r : plan.ranks) r.padding_frames = 0;
    if (plan.ranks.empty()) return plan;
    const std::uint64_t t = temporal_patch;

    // Original rank ids, to report merges.
    std::vector<std::uint32_t> ids(plan.ranks.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);

    std::size_t r = 0;
    while (r + 1 < plan.ranks.size()) {
        const auto have = plan.ranks[r].target_count();
        const auto deficit = (t - have % t) % t;
        if (deficit == 0) {
            ++r;
            continue;
        }
        auto& next = plan.ranks[r + 1];
        if (next.target_count() > deficit) {
            move_head_targets(meta, plan.ranks[r], next, static_cast<std::size_t>(deficit));
            ++r;
            continue;
        }
        // The successor would be drained: fold it into this rank and retry.
        auto& cur = plan.ranks[r];
        for (auto& seg : next.segments) cur.segments.push_back(std::move(seg));
        plan.merged_ranks.push_back(ids[r + 1]);
        plan.ranks.erase(plan.ranks.begin() + static_cast<std::ptrdiff_t>(r + 1));
        ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(r + 1));
    }

    std::uint64_t total = 0;
    for (const auto& rank : plan.ranks) total += rank.target_count();
    plan.ranks.back().padding_frames = static_cast<std::uint32_t>((t - total % t) % t);
    plan.effective_world_size = static_cast<std::uint32_t>(plan.ranks.size());
    return plan;
}

DecodePlan make_plan(const VideoMeta& meta, const FrameSelection& sel, std::uint32_t world_size,
                     std::uint32_t num_engines, std::uint32_t temporal_patch) {
    return align_to_temporal_patch(meta, partition(meta, sel, world_size, num_engines), temporal_patch);
}

double estimate_work(const GopSegment& seg, Codec codec, ResolutionClass rc, const DecodeCostModel& model) {
    return seg.seek_count * model.seek(codec) +
           static_cast<double>(seg.est_work) * model.frame_cost(codec, rc) + model.engine_init_cost;
}

}  // namespace mmsim
