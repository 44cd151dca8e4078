#include "mmsim/orchestrator.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mmsim/errors.hpp"

namespace mmsim {

const char* to_string(Modality m) {
    switch (m) {
        case Modality::Text: return "text";
        case Modality::Image: return "image";
        case Modality::Video: return "video";
    }
    return "unknown";
}

void Request::validate() const {
    if (output_tokens == 0) throw std::invalid_argument("request needs at least one output token");
    if (prompt_tokens() == 0) throw std::invalid_argument("request has an empty prompt");
    if (!multimodal()) {
        if (patch_tokens != 0 || visual_tokens != 0 || !encode_units.empty()) {
            throw std::invalid_argument("text request carries visual tokens");
        }
        return;
    }
    if (visual_tokens > patch_tokens) throw std::invalid_argument("visual tokens exceed patch tokens");
    if (encode_units.empty()) throw std::invalid_argument("multimodal request has no encode units");
    if (std::accumulate(encode_units.begin(), encode_units.end(), std::uint64_t{0}) != patch_tokens) {
        throw std::invalid_argument("encode units do not sum to patch tokens");
    }
}

void SchedulerConfig::validate() const {
    if (p_token_budget < 1) throw ConfigError("scheduler.p_token_budget", "must be >= 1");
    if (e_token_budget < 1) throw ConfigError("scheduler.e_token_budget", "must be >= 1");
    if (kv_pages < 1) throw ConfigError("scheduler.kv_pages", "must be >= 1");
    if (kv_page_size < 1) throw ConfigError("scheduler.kv_page_size", "must be >= 1");
    if (visual_pages < 1) throw ConfigError("scheduler.visual_pages", "must be >= 1");
    if (visual_page_size < 1) throw ConfigError("scheduler.visual_page_size", "must be >= 1");
    if (tbt_slo < 0) throw ConfigError("scheduler.tbt_slo", "must be >= 0");
}

KvCache::KvCache(std::uint32_t pages, std::uint32_t page_size) : total_(pages), page_size_(page_size), free_(pages) {
    if (page_size == 0) throw std::invalid_argument("kv page size must be >= 1");
}

std::uint32_t KvCache::pages_for(std::uint64_t tokens) const {
    return static_cast<std::uint32_t>((tokens + page_size_ - 1) / page_size_);
}

bool KvCache::reserve(RequestId id, std::uint64_t tokens) {
    if (holds(id)) return true;
    const auto need = pages_for(tokens);
    if (need > free_) return false;
    free_ -= need;
    reserved_[id] = need;
    return true;
}

void KvCache::release(RequestId id) {
    auto it = reserved_.find(id);
    if (it == reserved_.end()) return;
    free_ += it->second;
    reserved_.erase(it);
}

std::uint64_t visual_token_word(RequestId id, std::uint64_t pos) {
    std::uint64_t x = id * 0x9e3779b97f4a7c15ull + pos;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

PrefillEncodeScheduler::PrefillEncodeScheduler(SchedulerConfig cfg)
    : cfg_(cfg), kv_(cfg.kv_pages, cfg.kv_page_size), visual_(cfg.visual_page_size, cfg.visual_pages) {
    cfg_.validate();
}

void PrefillEncodeScheduler::add(const Request& r) {
    r.validate();
    if (reqs_.count(r.id)) throw std::invalid_argument("duplicate request id " + std::to_string(r.id));
    reqs_[r.id] = Entry{r, !r.multimodal(), !r.multimodal(), 0};
    waiting_.push_back(r.id);
}

void PrefillEncodeScheduler::mark_preprocessed(RequestId id) { reqs_.at(id).preprocessed = true; }

std::optional<RequestId> PrefillEncodeScheduler::next_request(std::size_t& cursor) const {
    while (cursor < waiting_.size()) {
        const auto id = waiting_[cursor++];
        if (prefill_ready(reqs_.at(id))) return id;
    }
    return std::nullopt;
}

std::vector<std::uint64_t> PrefillEncodeScheduler::chunk_encode(const std::vector<EncodeItem>& items) const {
    std::vector<std::uint64_t> chunks;
    std::uint64_t cur = 0;
    for (const auto& item : items) {
        for (auto unit : reqs_.at(item.id).req.encode_units) {
            if (cur > 0 && cur + unit > cfg_.e_token_budget) {
                chunks.push_back(cur);
                cur = 0;
            }
            cur += unit;
        }
    }
    if (cur > 0) chunks.push_back(cur);
    return chunks;
}

IterationPlan PrefillEncodeScheduler::schedule() {
    IterationPlan plan;
    const std::uint64_t tau = cfg_.p_token_budget;
    const std::uint64_t alpha = cfg_.e_token_budget;

    // Running requests first.
    for (auto id : running_) {
        const auto& e = reqs_.at(id);
        const std::uint64_t remaining = e.req.prompt_tokens() - e.prefilled;
        const std::uint64_t c = std::min(remaining, tau - plan.n_p);
        if (c == 0) continue;
        plan.n_p += c;
        plan.prefill.push_back({id, e.prefilled, c});
    }

    // Encode scan from the earliest waiting request with unfinished encode.
    for (auto id : waiting_) {
        const auto& e = reqs_.at(id);
        if (!e.req.multimodal() || e.encoded) continue;
        if (!e.preprocessed) continue;
        const bool allocable = visual_.has_request(id) || visual_.can_alloc(id, e.req.visual_tokens);
        if (!(allocable && plan.n_e < alpha)) break;
        if (!visual_.has_request(id)) visual_.alloc_pages(id, e.req.visual_tokens);
        plan.n_e += e.req.patch_tokens;
        plan.encode.push_back({id, e.req.patch_tokens});
    }
    plan.encode_chunks = chunk_encode(plan.encode);

    // New prefill admissions.
    std::size_t cursor = 0;
    auto next = next_request(cursor);
    while (next) {
        const auto& e = reqs_.at(*next);
        const std::uint64_t need = e.req.prompt_tokens() + e.req.output_tokens;
        if (!(kv_.holds(*next) || kv_.can_reserve(need)) || plan.n_p >= tau) break;
        const std::uint64_t c = std::min(e.req.prompt_tokens() - e.prefilled, tau - plan.n_p);
        if (c == 0) break;
        kv_.reserve(*next, need);
        plan.n_p += c;
        plan.prefill.push_back({*next, e.prefilled, c});
        next = next_request(cursor);
    }
    return plan;
}

std::vector<RequestId> PrefillEncodeScheduler::complete(const IterationPlan& plan) {
    for (const auto& item : plan.encode) {
        auto& e = reqs_.at(item.id);
        const std::uint64_t n = e.req.visual_tokens;
        TokenSpan span{item.id, 0, n, 1, {}};
        span.payload.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) span.payload.push_back(visual_token_word(item.id, i));
        const std::pair<RequestId, std::uint64_t> batch{item.id, n};
        visual_.write_chunk(span, visual_.plan_write(std::span(&batch, 1)));
        visual_.seal(item.id);
        e.encoded = true;
    }

    std::vector<RequestId> done;
    for (const auto& item : plan.prefill) {
        auto& e = reqs_.at(item.id);
        if (item.start != e.prefilled) throw std::logic_error("prefill plan is stale");
        auto wit = std::find(waiting_.begin(), waiting_.end(), item.id);
        if (wit != waiting_.end()) {
            waiting_.erase(wit);
            running_.push_back(item.id);
        }
        // The visual part of the chunk is read out of the buffer.
        const std::uint64_t vis_end = std::min(item.start + item.tokens, e.req.visual_tokens);
        if (item.start < vis_end) {
            const std::pair<RequestId, std::uint64_t> batch{item.id, vis_end - item.start};
            const auto r = visual_.read_chunk(item.id, item.start, vis_end - item.start,
                                              visual_.plan_read(std::span(&batch, 1)));
            for (std::uint64_t i = 0; i < r.span.count; ++i) {
                if (r.span.payload[i] != visual_token_word(item.id, item.start + i)) {
                    throw std::logic_error("visual token payload corrupted");
                }
            }
        }
        e.prefilled += item.tokens;
        if (e.prefilled == e.req.prompt_tokens()) {
            visual_.release(item.id);
            running_.erase(std::find(running_.begin(), running_.end(), item.id));
            done.push_back(item.id);
        }
    }
    return done;
}

void PrefillEncodeScheduler::release(RequestId id) {
    kv_.release(id);
    reqs_.erase(id);
}

bool PrefillEncodeScheduler::idle() const { return waiting_.empty() && running_.empty(); }

bool PrefillEncodeScheduler::has_ready_work() const {
    if (!running_.empty()) return true;
    for (auto id : waiting_) {
        const auto& e = reqs_.at(id);
        if (prefill_ready(e) || e.preprocessed) return true;
    }
    return false;
}

DecodeStep decode_step(std::size_t batch, const PhaseCostModel& cost, const InterferenceTable& table,
                       std::span<const Aggressor> aggressors, double scale) {
    DecodeStep s;
    s.batch = batch;
    if (batch == 0) return s;
    s.factor = table.factor(Phase::Decode, static_cast<double>(batch), aggressors);
    s.latency = cost.decode(batch) * scale * s.factor;
    return s;
}

void DecodeBatcher::enqueue(RequestId id, std::uint64_t tokens, double eligible) {
    pending_.push_back({id, tokens, eligible});
}

const std::vector<RequestId>& DecodeBatcher::begin_iteration(double now) {
    for (auto it = pending_.begin(); it != pending_.end();) {
        if (it->eligible <= now) {
            if (it->tokens > 0) {
                batch_.push_back(it->id);
                remaining_[it->id] = it->tokens;
            }
            it = pending_.erase(it);
        } else {
            ++it;
        }
    }
    return batch_;
}

std::vector<RequestId> DecodeBatcher::finish_iteration() {
    std::vector<RequestId> finished;
    std::vector<RequestId> keep;
    for (auto id : batch_) {
        if (--remaining_[id] == 0) {
            finished.push_back(id);
            remaining_.erase(id);
        } else {
            keep.push_back(id);
        }
    }
    batch_ = std::move(keep);
    return finished;
}

std::optional<double> DecodeBatcher::next_eligible() const {
    std::optional<double> t;
    for (const auto& p : pending_) {
        if (!t || p.eligible < *t) t = p.eligible;
    }
    return t;
}

}  // namespace mmsim
