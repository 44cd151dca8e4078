#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/codec_sched.hpp"
#include "mmsim/gop_planner.hpp"
#include "mmsim/pipeline_sim.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

struct PlanConfig {
    std::uint32_t world_size = 1;
    std::uint32_t num_engines = 5;
    std::uint32_t temporal_patch = 2;
    SelectionPolicy selection = SelectionPolicy::uniform(256);
};

enum class DecodePolicy { StallFree, WholeVideo };

struct DecodeSimConfig {
    DecodePolicy policy = DecodePolicy::StallFree;
    MemoryPolicy memory = MemoryPolicy::DeferredPerRank;
    EngineTopology topology{1, 5, 4};
    /// Seconds between consecutive job arrivals, in input order.
    double arrival_gap = 0.0;
    double handoff_delay = 0.0;
};

struct SweepConfig {
    std::vector<double> rates;
    std::vector<ArchKind> archs{ArchKind::Monolithic, ArchKind::Split, ArchKind::Unified};
    bool parallel = true;
    /// Requests per simulated rate; long traces approach steady state.
    std::uint32_t num_requests = 300;
};

/// Everything a subcommand may read. Absent sections keep their defaults.
struct RunConfig {
    std::uint64_t seed = 0;
    SimConfig sim;
    WorkloadConfig workload;
    /// JSON-lines trace replacing the generated workload when set.
    std::string workload_file;
    PlanConfig plan;
    DecodeSimConfig decode_sim;
    SweepConfig sweep;
};

/// Strict parse: unknown keys and type mismatches throw ConfigError with
/// the key path, e.g. "scheduler.p_token_budget".
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

/// The default sweep ladder: 0.05 to 1.5 requests/s in 0.05 steps.
std::vector<double> default_rate_ladder();

DecodeCostModel parse_decode_cost(const nlohmann::json& j, const std::string& path, DecodeCostModel base);
InterferenceTable parse_interference(const nlohmann::json& j, const std::string& path);

nlohmann::ordered_json to_json(const DecodeCostModel& m);
nlohmann::ordered_json to_json(const InterferenceTable& t);
/// Effective configuration, every field explicit.
nlohmann::ordered_json to_json(const RunConfig& c);

}  // namespace mmsim
