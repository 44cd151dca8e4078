#include <gtest/gtest.h>

#include <numeric>

#include "mmsim/codec_sched.hpp"
#include "mmsim/errors.hpp"
#include "oracles.hpp"

using namespace mmsim;
using namespace mmsim::testing;

namespace {

WorkerLoad load(std::uint64_t job, std::vector<double> durations, double arrival = 0.0, std::uint64_t frames = 1) {
    WorkerLoad w;
    w.job = job;
    w.arrival = arrival;
    w.segment_durations = std::move(durations);
    w.frames = frames;
    return w;
}

double completion(const ScheduleTrace& t, std::uint64_t job) { return t.job(job).completion; }

std::vector<TraceEvent> segment_events(const ScheduleTrace& t) {
    std::vector<TraceEvent> out;
    for (const auto& e : t.events) {
        if (e.kind == TraceEventKind::SegmentStart || e.kind == TraceEventKind::SegmentEnd) out.push_back(e);
    }
    return out;
}

}  // namespace

TEST(StallFree, ThreeLongSixShortOnThreeEngines) {
    // Total work 21 on 3 engines: 7 is the lower bound and both policies
    // reach it for a single job.
    const std::vector<WorkerLoad> w{load(0, {5, 5, 5, 1, 1, 1, 1, 1, 1})};
    const EngineTopology topo{1, 3, 1};
    const auto sf = schedule_stall_free(w, topo);
    const auto wv = schedule_whole_video(w, topo);
    EXPECT_DOUBLE_EQ(sf.makespan, 7.0);
    EXPECT_GE(wv.makespan, sf.makespan);
    check_trace_properties(sf, w, topo, true);
    check_trace_properties(wv, w, topo, false);
}

TEST(StallFree, SingleEngineSerialises) {
    const std::vector<WorkerLoad> w{load(0, {2, 3}), load(1, {1.5}, 0.5)};
    const EngineTopology topo{1, 1, 4};
    // Stall-free admits job 1 on arrival and hides its init behind job 0;
    // whole-video admits it only once job 0 returns the engine.
    EXPECT_DOUBLE_EQ(schedule_stall_free(w, topo, 0.25).makespan, 0.25 + 6.5);
    EXPECT_DOUBLE_EQ(schedule_whole_video(w, topo, 0.25).makespan, 0.25 + 5.0 + 0.25 + 1.5);
}

TEST(StallFree, BalancedSegmentsFinishTogether) {
    const std::vector<WorkerLoad> w{load(0, {2, 2, 2, 2})};
    const EngineTopology topo{1, 4, 1};
    const auto t = schedule_stall_free(w, topo, 0.3);
    EXPECT_DOUBLE_EQ(t.makespan, 2.3);
    for (double u : t.utilization()) EXPECT_NEAR(u, 2.0 / 2.3, 1e-12);
}

TEST(StallFree, FreedEngineServesNextWorkerImmediately) {
    // Two engines; job 0 has a long and a short segment, job 1 one short one.
    const std::vector<WorkerLoad> w{load(0, {4, 1}), load(1, {1})};
    const EngineTopology topo{1, 2, 2};
    const auto sf = schedule_stall_free(w, topo);
    const auto wv = schedule_whole_video(w, topo);
    EXPECT_DOUBLE_EQ(completion(sf, 1), 2.0);
    EXPECT_DOUBLE_EQ(completion(wv, 1), 5.0);
    EXPECT_DOUBLE_EQ(completion(sf, 0), 4.0);
    EXPECT_DOUBLE_EQ(completion(wv, 0), 4.0);
}

TEST(StallFree, CurrentWorkerKeepsItsEngine) {
    // Job 1 waits while job 0 still has segments queued.
    const std::vector<WorkerLoad> w{load(0, {1, 1, 1, 1}), load(1, {1})};
    const EngineTopology topo{1, 2, 2};
    const auto t = schedule_stall_free(w, topo);
    EXPECT_DOUBLE_EQ(completion(t, 0), 2.0);
    EXPECT_DOUBLE_EQ(completion(t, 1), 3.0);
    check_trace_properties(t, w, topo, true);
}

TEST(StallFree, AdmissionCapHoldsWorkersBack) {
    const std::vector<WorkerLoad> w{load(0, {1}), load(1, {1}), load(2, {1})};
    const EngineTopology topo{1, 5, 1};
    const auto t = schedule_stall_free(w, topo);
    EXPECT_DOUBLE_EQ(completion(t, 2), 3.0);
    check_trace_properties(t, w, topo, true);
}

TEST(StallFree, WorkerInitIsSerialised) {
    const std::vector<WorkerLoad> w{load(0, {1}), load(1, {1}), load(2, {1})};
    const EngineTopology topo{1, 5, 3};
    const auto t = schedule_stall_free(w, topo, 0.5);
    EXPECT_DOUBLE_EQ(completion(t, 0), 1.5);
    EXPECT_DOUBLE_EQ(completion(t, 1), 2.0);
    EXPECT_DOUBLE_EQ(completion(t, 2), 2.5);
}

TEST(WholeVideo, SingleJobEqualSegmentsMatchesStallFree) {
    const std::vector<WorkerLoad> w{load(0, {1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5})};
    const EngineTopology topo{1, 3, 2};
    const auto sf = schedule_stall_free(w, topo, 0.2);
    const auto wv = schedule_whole_video(w, topo, 0.2);
    EXPECT_EQ(segment_events(sf), segment_events(wv));
    EXPECT_DOUBLE_EQ(sf.makespan, wv.makespan);
}

TEST(Schedules, RandomInstancesSatisfyContracts) {
    std::size_t high_var = 0;
    std::size_t strict = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const auto inst = random_sched_instance(seed);
        const auto sf = schedule_stall_free(inst.workers, inst.topo, inst.worker_init);
        const auto wv = schedule_whole_video(inst.workers, inst.topo, inst.worker_init);
        ASSERT_NO_THROW(check_trace_properties(sf, inst.workers, inst.topo, true)) << "seed " << seed;
        ASSERT_NO_THROW(check_trace_properties(wv, inst.workers, inst.topo, false)) << "seed " << seed;
        ASSERT_LE(sf.makespan, wv.makespan + 1e-9) << "seed " << seed;
        if (inst.coefficient_of_variation > 0.5) {
            ++high_var;
            if (sf.makespan < wv.makespan - 1e-9) ++strict;
        }
        // Busy time is conserved.
        double work = 0.0;
        for (const auto& l : inst.workers) work += std::accumulate(l.segment_durations.begin(), l.segment_durations.end(), 0.0);
        EXPECT_NEAR(std::accumulate(sf.engine_busy.begin(), sf.engine_busy.end(), 0.0), work, 1e-9);
    }
    EXPECT_GT(high_var, 0u);
    EXPECT_GE(2 * strict, high_var);
}

TEST(Schedules, Deterministic) {
    const auto inst = random_sched_instance(99);
    EXPECT_EQ(schedule_stall_free(inst.workers, inst.topo, 0.1), schedule_stall_free(inst.workers, inst.topo, 0.1));
    EXPECT_EQ(trace_csv(schedule_whole_video(inst.workers, inst.topo), inst.topo.engines_per_gpu),
              trace_csv(schedule_whole_video(inst.workers, inst.topo), inst.topo.engines_per_gpu));
}

TEST(Schedules, RanksSpreadOverGpus) {
    SyntheticVideoSpec s;
    s.num_frames = 600;
    s.gop_sizes = {30};
    const auto meta = synthesize_meta(s);
    const auto sel = select_frames(meta, SelectionPolicy::uniform(64));
    const EngineTopology topo{2, 3, 2};
    std::vector<DecodeJob> jobs{{0, make_plan(meta, sel, 2, 3, 2), 0.0}, {1, make_plan(meta, sel, 2, 3, 2), 1.0}};
    const auto model = DecodeCostModel::calibrated_nvdec();
    const auto loads = expand_jobs(jobs, topo, model);
    ASSERT_EQ(loads.size(), 4u);
    EXPECT_EQ(loads[1].gpu, 1u);
    const auto t = schedule_stall_free(jobs, topo, model);
    check_trace_properties(t, loads, topo, true);
    EXPECT_EQ(t.engine_busy.size(), 6u);
    for (const auto& j : t.jobs) EXPECT_GE(j.completion, j.arrival);
}

TEST(Schedules, JitterIsPureFunctionOfSeed) {
    SyntheticVideoSpec s;
    s.num_frames = 300;
    s.gop_sizes = {30};
    const auto meta = synthesize_meta(s);
    std::vector<DecodeJob> jobs{{0, make_plan(meta, select_frames(meta, SelectionPolicy::uniform(64)), 1, 5, 2), 0.0}};
    auto model = DecodeCostModel::calibrated_nvdec();
    model.jitter = 0.2;
    const EngineTopology topo{1, 5, 4};
    const auto a = expand_jobs(jobs, topo, model, 1);
    EXPECT_EQ(a[0].segment_durations, expand_jobs(jobs, topo, model, 1)[0].segment_durations);
    EXPECT_NE(a[0].segment_durations, expand_jobs(jobs, topo, model, 2)[0].segment_durations);
}

TEST(Memory, EmptyTraceHasZeroPeak) {
    const auto t = schedule_stall_free(std::span<const WorkerLoad>{}, EngineTopology{2, 5, 4});
    for (auto policy : {MemoryPolicy::Preallocate, MemoryPolicy::DeferredPerRank}) {
        const auto peaks = account_memory(t, policy, 2);
        ASSERT_EQ(peaks.size(), 2u);
        for (const auto& p : peaks) EXPECT_EQ(p.peak_frames, 0u);
    }
}

TEST(Memory, SingleRankPoliciesAgreeAtCompletion) {
    const std::vector<WorkerLoad> w{load(0, {2, 2}, 0.0, 64)};
    const auto t = schedule_stall_free(w, EngineTopology{1, 2, 1});
    const auto pre = account_memory(t, MemoryPolicy::Preallocate, 1);
    const auto def = account_memory(t, MemoryPolicy::DeferredPerRank, 1);
    EXPECT_EQ(pre[0].peak_frames, 64u);
    EXPECT_EQ(def[0].peak_frames, 64u);
    EXPECT_LT(pre[0].peak_time, def[0].peak_time);
}

TEST(Memory, BackloggedJobsPreallocateEverything) {
    std::vector<WorkerLoad> w;
    for (std::uint64_t j = 0; j < 4; ++j) w.push_back(load(j, {1, 1, 1}, 0.0, 256));
    const EngineTopology topo{1, 2, 1};
    const auto t = schedule_stall_free(w, topo);
    const auto pre = account_memory(t, MemoryPolicy::Preallocate, 1, 0.5);
    const auto def = account_memory(t, MemoryPolicy::DeferredPerRank, 1, 0.5);
    EXPECT_EQ(pre[0].peak_frames, 4u * 256u);
    EXPECT_LE(def[0].peak_frames, pre[0].peak_frames);
    EXPECT_EQ(pre, replay_memory(t, MemoryPolicy::Preallocate, 1, 0.5));
    EXPECT_EQ(def, replay_memory(t, MemoryPolicy::DeferredPerRank, 1, 0.5));
}

TEST(Memory, RandomInstancesMatchReplayAndDeferredDominates) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto inst = random_sched_instance(seed + 7000);
        // Split jobs over two GPUs to exercise per-GPU accounting.
        inst.topo.num_gpus = 2;
        for (auto& w : inst.workers) w.gpu = w.job % 2;
        const auto t = schedule_stall_free(inst.workers, inst.topo, inst.worker_init);
        const double delay = (seed % 3) * 0.25;
        const auto pre = account_memory(t, MemoryPolicy::Preallocate, 2, delay);
        const auto def = account_memory(t, MemoryPolicy::DeferredPerRank, 2, delay);
        ASSERT_EQ(pre, replay_memory(t, MemoryPolicy::Preallocate, 2, delay)) << "seed " << seed;
        ASSERT_EQ(def, replay_memory(t, MemoryPolicy::DeferredPerRank, 2, delay)) << "seed " << seed;
        for (std::size_t g = 0; g < 2; ++g) ASSERT_LE(def[g].peak_frames, pre[g].peak_frames);
    }
}

TEST(Speedup, SingleEngineIsBaseline) {
    SyntheticVideoSpec s;
    s.num_frames = 900;
    s.gop_sizes = {30};
    const auto meta = synthesize_meta(s);
    const auto sel = select_frames(meta, SelectionPolicy::uniform(128));
    const std::vector<EngineTopology> ladder{{1, 1, 1}};
    const auto rows = decode_speedup(meta, sel, ladder, DecodeCostModel::calibrated_nvdec(), 2);
    EXPECT_DOUBLE_EQ(rows[0].speedup, 1.0);
}

TEST(Speedup, LinearLimitWithoutOverheads) {
    SyntheticVideoSpec s;
    s.num_frames = 400;
    s.gop_sizes = {10};
    s.codec = Codec::H265;
    const auto meta = synthesize_meta(s);
    const auto sel = select_frames(meta, SelectionPolicy::uniform(400));
    const std::vector<EngineTopology> ladder{{1, 4, 1}, {1, 5, 1}, {2, 5, 1}};
    const auto rows = decode_speedup(meta, sel, ladder, DecodeCostModel::linear(0.001), 1);
    EXPECT_NEAR(rows[0].speedup, 4.0, 1e-9);
    EXPECT_NEAR(rows[1].speedup, 5.0, 1e-9);
    EXPECT_NEAR(rows[2].speedup, 10.0, 1e-9);
}

TEST(CostModel, ValidationBounds) {
    auto m = DecodeCostModel::calibrated_nvdec();
    EXPECT_NO_THROW(m.validate());
    m.seek_cost[Codec::H264] = 0.2;
    EXPECT_THROW(m.validate(), ConfigError);
    m = DecodeCostModel::calibrated_nvdec();
    m.jitter = 1.0;
    EXPECT_THROW(m.validate(), ConfigError);
    m = DecodeCostModel::calibrated_nvdec();
    m.engine_init_cost = -1;
    EXPECT_THROW(m.validate(), ConfigError);
}

TEST(TraceCsv, HasHeaderAndOneLinePerEvent) {
    const std::vector<WorkerLoad> w{load(0, {1, 2})};
    const auto t = schedule_stall_free(w, EngineTopology{1, 2, 1});
    const auto csv = trace_csv(t, 2);
    EXPECT_EQ(csv.rfind("time,gpu,engine,event,job,rank,segment\n", 0), 0u);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), t.events.size() + 1);
}
