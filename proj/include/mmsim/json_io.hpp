#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/codec_sched.hpp"
#include "mmsim/gop_planner.hpp"
#include "mmsim/pipeline_sim.hpp"
#include "mmsim/sweep.hpp"
#include "mmsim/video_meta.hpp"

namespace mmsim {

using ojson = nlohmann::ordered_json;

ojson to_json(const VideoMeta& meta);
VideoMeta video_meta_from_json(const nlohmann::json& j);

ojson to_json(const FrameSelection& sel);
ojson to_json(const DecodePlan& plan);
/// Inverse of to_json(DecodePlan); throws ConfigError on malformed input.
DecodePlan decode_plan_from_json(const nlohmann::json& j);

ojson schedule_summary(const ScheduleTrace& trace, const EngineTopology& topo,
                       const std::vector<MemoryPeak>& memory);

ojson to_json(const Summary& s);
ojson to_json(const MetricsLog& m, bool per_request);
ojson run_summary(const RunResult& r, const std::vector<Stall>& stalls);
ojson to_json(const std::vector<CapacityRow>& rows);

/// Two-space indented JSON with a trailing newline.
std::string dump(const ojson& j);

}  // namespace mmsim
