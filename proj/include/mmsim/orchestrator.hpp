#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mmsim/embed_buffer.hpp"
#include "mmsim/interference.hpp"

namespace mmsim {

enum class Modality { Text, Image, Video };

const char* to_string(Modality m);

/// One inference request. Prompt order is visual tokens then text tokens.
struct Request {
    RequestId id = 0;
    double arrival = 0.0;
    Modality modality = Modality::Text;
    std::uint64_t text_tokens = 0;
    std::uint64_t patch_tokens = 0;
    std::uint64_t visual_tokens = 0;
    std::uint64_t output_tokens = 1;
    /// Patch tokens of each encode unit (image or temporal patch group);
    /// sums to patch_tokens.
    std::vector<std::uint64_t> encode_units;

    bool multimodal() const { return modality != Modality::Text; }
    std::uint64_t prompt_tokens() const { return visual_tokens + text_tokens; }
    /// Throws std::invalid_argument on inconsistent counts.
    void validate() const;
};

struct SchedulerConfig {
    /// Prefill token budget per iteration.
    std::uint64_t p_token_budget = 2048;
    /// Encode token target per iteration; a batch may overshoot it.
    std::uint64_t e_token_budget = 10240;
    /// Opaque capacity knob; recorded, budgets are set directly.
    std::uint64_t t_max = 0;
    double tbt_slo = 0.0;
    std::uint32_t kv_pages = 65536;
    std::uint32_t kv_page_size = 16;
    std::uint32_t visual_pages = 4096;
    std::uint32_t visual_page_size = 128;

    void validate() const;
    bool operator==(const SchedulerConfig&) const = default;
};

struct EncodeItem {
    RequestId id = 0;
    std::uint64_t patch_tokens = 0;
    bool operator==(const EncodeItem&) const = default;
};

struct PrefillItem {
    RequestId id = 0;
    std::uint64_t start = 0;
    std::uint64_t tokens = 0;
    bool operator==(const PrefillItem&) const = default;
};

/// Work chosen for one encode+prefill iteration. Encode runs first, as
/// `encode_chunks` sub-executions of at most e_token_budget tokens each
/// unless a single unit is larger.
struct IterationPlan {
    std::vector<EncodeItem> encode;
    std::vector<PrefillItem> prefill;
    std::vector<std::uint64_t> encode_chunks;
    std::uint64_t n_e = 0;
    std::uint64_t n_p = 0;

    bool empty() const { return encode.empty() && prefill.empty(); }
    bool operator==(const IterationPlan&) const = default;
};

/// Page-granular KV cache. A request reserves its prompt plus output
/// tokens at admission and keeps them until release.
class KvCache {
public:
    KvCache(std::uint32_t pages, std::uint32_t page_size);

    std::uint32_t pages_for(std::uint64_t tokens) const;
    bool holds(RequestId id) const { return reserved_.count(id) > 0; }
    bool can_reserve(std::uint64_t tokens) const { return pages_for(tokens) <= free_; }
    /// Returns false, changing nothing, if the pages are not available.
    bool reserve(RequestId id, std::uint64_t tokens);
    void release(RequestId id);
    std::uint32_t free_pages() const { return free_; }
    std::uint32_t total_pages() const { return total_; }

private:
    std::uint32_t total_;
    std::uint32_t page_size_;
    std::uint32_t free_;
    std::map<RequestId, std::uint32_t> reserved_;
};

/// Co-located encode and prefill scheduling with token budgets.
///
/// Waiting requests are kept in arrival order. Each iteration first
/// continues the running prefill batch, then scans multimodal requests with
/// pending encode into E, then admits new prefill requests while the KV
/// cache allows and n_p < tau.
class PrefillEncodeScheduler {
public:
    explicit PrefillEncodeScheduler(SchedulerConfig cfg);

    void add(const Request& r);
    /// Visual preprocessing finished; patch tokens are available.
    void mark_preprocessed(RequestId id);

    IterationPlan schedule();
    /// Applies a plan returned by the last schedule(): encoded requests
    /// store their visual tokens, prefill chunks consume them. Returns ids
    /// whose prefill completed, in batch order.
    std::vector<RequestId> complete(const IterationPlan& plan);
    /// Frees the request's KV pages after decoding ends.
    void release(RequestId id);

    bool idle() const;
    bool has_ready_work() const;
    std::size_t waiting() const { return waiting_.size(); }
    std::size_t running() const { return running_.size(); }
    const KvCache& kv() const { return kv_; }
    const EmbedBuffer& visual_buffer() const { return visual_; }
    const SchedulerConfig& config() const { return cfg_; }

private:
    struct Entry {
        Request req;
        bool preprocessed = false;
        bool encoded = false;
        std::uint64_t prefilled = 0;
    };

    bool prefill_ready(const Entry& e) const { return !e.req.multimodal() || e.encoded; }
    std::optional<RequestId> next_request(std::size_t& cursor) const;
    std::vector<std::uint64_t> chunk_encode(const std::vector<EncodeItem>& items) const;

    SchedulerConfig cfg_;
    std::map<RequestId, Entry> reqs_;
    std::deque<RequestId> waiting_;
    std::vector<RequestId> running_;
    KvCache kv_;
    EmbedBuffer visual_;
};

/// Visual token payload word for (request, position); deterministic.
std::uint64_t visual_token_word(RequestId id, std::uint64_t pos);

struct DecodeStep {
    double latency = 0.0;
    double factor = 1.0;
    std::size_t batch = 0;
};

/// Latency of one decode iteration under co-running aggressors.
DecodeStep decode_step(std::size_t batch, const PhaseCostModel& cost, const InterferenceTable& table,
                       std::span<const Aggressor> aggressors, double scale = 1.0);

/// Continuous batching decode lane. Sequences enter in handoff order once
/// eligible and leave after their last token.
class DecodeBatcher {
public:
    /// `tokens` still to generate; `eligible` is when the handoff lands.
    void enqueue(RequestId id, std::uint64_t tokens, double eligible);
    /// Admits every sequence eligible at `now`; returns the batch.
    const std::vector<RequestId>& begin_iteration(double now);
    /// One token per batch member; returns members that finished.
    std::vector<RequestId> finish_iteration();

    const std::vector<RequestId>& batch() const { return batch_; }
    std::size_t active() const { return batch_.size(); }
    bool empty() const { return batch_.empty() && pending_.empty(); }
    /// Earliest eligibility among pending sequences.
    std::optional<double> next_eligible() const;

private:
    struct Pending {
        RequestId id;
        std::uint64_t tokens;
        double eligible;
    };
    std::deque<Pending> pending_;
    std::vector<RequestId> batch_;
    std::map<RequestId, std::uint64_t> remaining_;
};

}  // namespace mmsim
