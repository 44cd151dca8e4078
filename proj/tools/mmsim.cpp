// Command-line driver. Exit codes: 0 success, 1 configuration or input
// error, 2 regression against --assert-baseline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmsim/codec_sched.hpp"
#include "mmsim/config.hpp"
#include "mmsim/container_index.hpp"
#include "mmsim/errors.hpp"
#include "mmsim/gop_planner.hpp"
#include "mmsim/json_io.hpp"
#include "mmsim/pipeline_sim.hpp"
#include "mmsim/sweep.hpp"
#include "mmsim/workload.hpp"

namespace fs = std::filesystem;
using namespace mmsim;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRegression = 2;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string arch;
    std::string preset;
    std::string baseline;
};

class Regression : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("", path + ": invalid JSON: " + e.what());
    }
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("", "cannot write '" + path.string() + "'");
    out << content;
}

RunConfig effective_config(const Options& o) {
    RunConfig c = o.config.empty() ? parse_config(nlohmann::json::object()) : load_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (!o.arch.empty()) {
        try {
            c.sim.arch.kind = arch_from_string(o.arch);
        } catch (const std::exception& e) {
            throw ConfigError("--arch", e.what());
        }
    }
    if (!o.preset.empty()) {
        try {
            c.workload.preset = PresetSpec::named(o.preset);
        } catch (const std::exception& e) {
            throw ConfigError("--preset", e.what());
        }
    }
    return c;
}

fs::path out_dir(const Options& o) { return o.out.empty() ? fs::path("out") : fs::path(o.out); }

VideoMeta load_meta(const std::string& input) {
    if (fs::path(input).extension() == ".json") {
        auto j = read_json(input);
        return video_meta_from_json(j.contains("meta") ? j["meta"] : j);
    }
    return parse_container_file(input);
}

int cmd_index(const Options& o, const std::string& input) {
    const auto meta = parse_container_file(input);
    const auto text = dump(to_json(meta));
    if (o.out.empty()) {
        std::cout << text;
    } else {
        write_file(out_dir(o) / "meta.json", text);
        std::cout << input << ": " << to_string(meta.codec) << " " << meta.width << "x" << meta.height << ", "
                  << meta.frame_count() << " frames, " << meta.gop_count() << " GOPs\n";
    }
    return kOk;
}

int cmd_plan(const Options& o, const std::string& input) {
    const auto cfg = effective_config(o);
    const auto meta = load_meta(input);
    const auto sel = select_frames(meta, cfg.plan.selection);
    const auto plan = make_plan(meta, sel, cfg.plan.world_size, cfg.plan.num_engines, cfg.plan.temporal_patch);
    ojson j;
    j["meta"] = to_json(meta);
    j["selection"] = to_json(sel);
    j["plan"] = to_json(plan);
    write_file(out_dir(o) / "plan.json", dump(j));
    std::cout << "targets " << sel.target_indices.size() << ", segments " << plan.segment_count() << ", ranks "
              << plan.effective_world_size << "/" << plan.world_size << ", padding " << plan.padding_frames()
              << ", max segment work " << plan.max_segment_work() << " frames\n";
    return kOk;
}

int cmd_decode_sim(const Options& o, const std::vector<std::string>& inputs) {
    const auto cfg = effective_config(o);
    std::vector<DecodeJob> jobs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto j = read_json(inputs[i]);
        jobs.push_back({i, decode_plan_from_json(j.contains("plan") ? j["plan"] : j),
                        cfg.decode_sim.arrival_gap * static_cast<double>(i)});
    }
    const auto& topo = cfg.decode_sim.topology;
    const auto trace = cfg.decode_sim.policy == DecodePolicy::StallFree
                           ? schedule_stall_free(jobs, topo, cfg.sim.nvdec, cfg.seed)
                           : schedule_whole_video(jobs, topo, cfg.sim.nvdec, cfg.seed);
    const auto mem = account_memory(trace, cfg.decode_sim.memory, topo.num_gpus, cfg.decode_sim.handoff_delay);
    auto summary = schedule_summary(trace, topo, mem);
    const auto dir = out_dir(o);
    write_file(dir / "trace.csv", trace_csv(trace, topo.engines_per_gpu));
    write_file(dir / "summary.json", dump(summary));
    std::cout << "jobs " << jobs.size() << ", makespan " << trace.makespan << " s\n";
    if (!o.baseline.empty()) {
        const auto base = read_json(o.baseline);
        const double limit = base.at("makespan").get<double>();
        if (trace.makespan > limit * (1 + 1e-9)) {
            throw Regression("makespan " + std::to_string(trace.makespan) + " exceeds baseline " + std::to_string(limit));
        }
    }
    return kOk;
}

WorkloadTrace workload_of(const RunConfig& cfg) {
    if (!cfg.workload_file.empty()) return load_workload_jsonl(cfg.workload_file);
    return generate_workload(cfg.workload, cfg.seed);
}

int cmd_serve_sim(const Options& o) {
    const auto cfg = effective_config(o);
    const auto trace = workload_of(cfg);
    const auto result = run(cfg.sim, trace, cfg.seed);
    const auto stalls = stall_report(result, cfg.sim.stall_k);
    const auto dir = out_dir(o);
    write_file(dir / "config.json", dump(to_json(cfg)));
    write_file(dir / "workload.jsonl", workload_jsonl(trace));
    write_file(dir / "summary.json", dump(run_summary(result, stalls)));
    write_file(dir / "tokens.csv", token_csv(result));
    const auto& m = result.metrics;
    std::printf("arch %s: %zu/%zu completed, TTFT p50 %.3f s, TBT p99 %.3f s, %.2f tok/s, SLO %.3f, stalls %.3f s\n",
                to_string(result.arch), m.completed, m.requests.size(), m.ttft.p50, m.tbt.p99, m.throughput_tokens,
                m.slo_attainment, total_stall_time(stalls));
    if (!o.baseline.empty()) {
        const auto base = read_json(o.baseline);
        const double att = base.at("metrics").at("slo_attainment").get<double>();
        const double tput = base.at("metrics").at("throughput_tokens_per_s").get<double>();
        if (m.slo_attainment < att - 1e-9) throw Regression("SLO attainment below baseline");
        if (m.throughput_tokens < tput * (1 - 1e-9)) throw Regression("throughput below baseline");
    }
    return kOk;
}

int cmd_sweep(const Options& o) {
    const auto cfg = effective_config(o);
    auto workload = cfg.workload;
    workload.num_requests = cfg.sweep.num_requests;
    const auto rows = cfg.sweep.parallel ? sweep_parallel(cfg.sim, workload, cfg.sweep.rates, cfg.sweep.archs, cfg.seed)
                                         : sweep_serial(cfg.sim, workload, cfg.sweep.rates, cfg.sweep.archs, cfg.seed);
    const auto dir = out_dir(o);
    write_file(dir / "config.json", dump(to_json(cfg)));
    write_file(dir / "capacity.json", dump(to_json(rows)));
    for (const auto& r : rows) std::printf("%-10s capacity %.3f req/s\n", to_string(r.arch), r.capacity);
    if (!o.baseline.empty()) {
        const auto base = read_json(o.baseline);
        for (const auto& b : base) {
            const auto arch = b.at("arch").get<std::string>();
            for (const auto& r : rows) {
                if (to_string(r.arch) == arch && r.capacity < b.at("capacity").get<double>() - 1e-9) {
                    throw Regression(arch + " capacity below baseline");
                }
            }
        }
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal serving pipeline simulator"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON configuration file");
        sub->add_option("--seed", seed, "Random seed (overrides the config)");
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--arch", o.arch, "monolithic | split | unified")
            ->check(CLI::IsMember({"monolithic", "split", "unified"}));
        sub->add_option("--preset", o.preset, "Workload preset");
        sub->add_option("--assert-baseline", o.baseline, "Fail with exit 2 if results regress against this file");
    };

    std::string input;
    std::vector<std::string> inputs;
    auto* index = app.add_subcommand("index", "Print the frame timeline of an MP4 file");
    index->add_option("input", input, "MP4 file")->required();
    index->add_option("--out", o.out, "Write meta.json here instead of standard output");
    auto* plan = app.add_subcommand("plan", "Build a decode plan for a video");
    plan->add_option("input", input, "MP4 file or VideoMeta JSON")->required();
    common(plan);
    auto* dsim = app.add_subcommand("decode-sim", "Schedule decode plans on NVDEC engines");
    dsim->add_option("plans", inputs, "Plan JSON files, one job each, in arrival order")->required();
    common(dsim);
    auto* ssim = app.add_subcommand("serve-sim", "Simulate end-to-end serving");
    common(ssim);
    auto* sweep = app.add_subcommand("sweep", "Find the sustainable request rate per architecture");
    common(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }
    for (auto* sub : {plan, dsim, ssim, sweep}) {
        if (sub->parsed() && sub->count("--seed")) o.seed = seed;
    }

    try {
        if (index->parsed()) return cmd_index(o, input);
        if (plan->parsed()) return cmd_plan(o, input);
        if (dsim->parsed()) return cmd_decode_sim(o, inputs);
        if (ssim->parsed()) return cmd_serve_sim(o);
        if (sweep->parsed()) return cmd_sweep(o);
    } catch (const Regression& e) {
        std::cerr << "regression: " << e.what() << "\n";
        return kRegression;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
    return kOk;
}
