#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include "mmsim/container_index.hpp"
#include <stdexcept>

namespace mmsim::testing {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

std::size_t gop_index(const VideoMeta& meta, std::uint32_t frame) {
    std::size_t g = 0;
    while (g + 1 < meta.keyframe_indices.size() && meta.keyframe_indices[g + 1] <= frame) ++g;
    return g;
}

std::uint64_t rank_work(const VideoMeta& meta, const std::vector<std::vector<std::uint32_t>>& segs) {
    std::uint64_t w = 0;
    for (const auto& s : segs) w += naive_decode_frames(meta, s);
    return w;
}

std::size_t count_targets(const std::vector<std::vector<std::uint32_t>>& segs) {
    std::size_t n = 0;
    for (const auto& s : segs) n += s.size();
    return n;
}

}  // namespace

// ---------------------------------------------------------------- planning

std::uint64_t naive_decode_frames(const VideoMeta& meta, const std::vector<std::uint32_t>& targets) {
    if (targets.empty()) return 0;
    std::vector<bool> decoded(meta.frame_count(), false);
    if (meta.codec == Codec::H264) {
        const auto from = meta.keyframe_indices[gop_index(meta, targets.front())];
        for (auto f = from; f <= targets.back(); ++f) decoded[f] = true;
    } else {
        for (auto t : targets) {
            const auto g = gop_index(meta, t);
            std::uint32_t last = t;
            for (auto u : targets) {
                if (gop_index(meta, u) == g) last = std::max(last, u);
            }
            for (auto f = meta.keyframe_indices[g]; f <= last; ++f) decoded[f] = true;
        }
    }
    return static_cast<std::uint64_t>(std::count(decoded.begin(), decoded.end(), true));
}

std::uint64_t brute_force_min_max_work(const VideoMeta& meta, const std::vector<std::uint32_t>& targets,
                                       std::size_t slots) {
    // Units are the runs of targets sharing a GOP; segments cut between units.
    std::vector<std::vector<std::uint32_t>> units;
    for (auto t : targets) {
        if (units.empty() || gop_index(meta, units.back().back()) != gop_index(meta, t)) units.emplace_back();
        units.back().push_back(t);
    }
    const std::size_t n = units.size();
    auto cost = [&](std::size_t a, std::size_t b) {
        std::vector<std::uint32_t> merged;
        for (std::size_t u = a; u <= b; ++u) merged.insert(merged.end(), units[u].begin(), units[u].end());
        return naive_decode_frames(meta, merged);
    };
    // best[k][j]: optimal max cost covering units [0, j) with k groups.
    const std::uint64_t inf = std::numeric_limits<std::uint64_t>::max();
    const std::size_t groups = std::min(slots, n);
    std::vector<std::vector<std::uint64_t>> best(groups + 1, std::vector<std::uint64_t>(n + 1, inf));
    best[0][0] = 0;
    for (std::size_t k = 1; k <= groups; ++k) {
        for (std::size_t j = 1; j <= n; ++j) {
            for (std::size_t i = k - 1; i < j; ++i) {
                if (best[k - 1][i] == inf) continue;
                best[k][j] = std::min(best[k][j], std::max(best[k - 1][i], cost(i, j - 1)));
            }
        }
    }
    std::uint64_t out = inf;
    for (std::size_t k = 1; k <= groups; ++k) out = std::min(out, best[k][n]);
    return out;
}

std::vector<BoundaryShift> legal_shifts(const VideoMeta& meta, const std::vector<std::vector<std::uint32_t>>& left,
                                        const std::vector<std::vector<std::uint32_t>>& right, std::uint32_t t) {
    const auto nl = static_cast<std::int64_t>(count_targets(left));
    const auto nr = static_cast<std::int64_t>(count_targets(right));
    const auto base = static_cast<std::int64_t>(rank_work(meta, left) + rank_work(meta, right));
    std::vector<BoundaryShift> out;
    for (std::int64_t s = -(nl - 1); s <= nr - 1; ++s) {
        if ((nl + s) % t != 0) continue;
        auto l = left;
        auto r = right;
        if (s > 0) {
            for (std::int64_t k = 0; k < s; ++k) {
                while (r.front().empty()) r.erase(r.begin());
                l.back().push_back(r.front().front());
                r.front().erase(r.front().begin());
            }
        } else {
            for (std::int64_t k = 0; k < -s; ++k) {
                while (l.back().empty()) l.pop_back();
                r.front().insert(r.front().begin(), l.back().back());
                l.back().pop_back();
            }
        }
        const auto work = static_cast<std::int64_t>(rank_work(meta, l) + rank_work(meta, r));
        out.push_back({s, work - base});
    }
    return out;
}

std::vector<std::uint32_t> rank_targets(const RankShare& r) {
    std::vector<std::uint32_t> out;
    for (const auto& s : r.segments) out.insert(out.end(), s.targets.begin(), s.targets.end());
    return out;
}

// ------------------------------------------------------------------ buffer

FlatBuffer::FlatBuffer(std::uint32_t page_size, std::uint32_t total_pages, std::uint32_t width)
    : page_size_(page_size), total_(total_pages), width_(width) {}

std::uint32_t FlatBuffer::pages_of(std::uint64_t tokens) const {
    return static_cast<std::uint32_t>((tokens + page_size_ - 1) / page_size_);
}

std::uint32_t FlatBuffer::reclaimable(const Req& q) const {
    const std::uint32_t pages = pages_of(q.reserved);
    const std::uint64_t written = q.tokens.size() / width_;
    if (q.sealed && q.read == written) return pages;
    return std::min<std::uint32_t>(pages, static_cast<std::uint32_t>(q.read / page_size_));
}

std::uint32_t FlatBuffer::owned_pages(RequestId r) const {
    const auto& q = reqs_.at(r);
    return pages_of(q.reserved) - q.freed;
}

std::uint32_t FlatBuffer::free_pages() const {
    std::uint32_t used = 0;
    for (const auto& [id, q] : reqs_) used += pages_of(q.reserved) - q.freed;
    return total_ - used;
}

std::vector<RequestId> FlatBuffer::live() const {
    std::vector<RequestId> out;
    for (const auto& [id, q] : reqs_) out.push_back(id);
    return out;
}

std::optional<BufferError::Kind> FlatBuffer::alloc(RequestId r, std::uint64_t tokens) {
    const std::uint64_t reserved = reqs_.count(r) ? reqs_.at(r).reserved : 0;
    const std::uint32_t have = reqs_.count(r) ? pages_of(reserved) : 0;
    const std::uint32_t need = pages_of(reserved + tokens) - have;
    if (need > free_pages()) return BufferError::Kind::OutOfPages;
    reqs_[r].reserved += tokens;
    return std::nullopt;
}

std::optional<BufferError::Kind> FlatBuffer::write(RequestId r, std::uint64_t start,
                                                   const std::vector<std::uint64_t>& words) {
    auto it = reqs_.find(r);
    if (it == reqs_.end()) return BufferError::Kind::UnknownRequest;
    auto& q = it->second;
    const std::uint64_t count = words.size() / width_;
    if (start != q.tokens.size() / width_) return BufferError::Kind::GapError;
    if (q.sealed && count > 0) return BufferError::Kind::CapacityError;
    if (start + count > std::uint64_t{pages_of(q.reserved)} * page_size_) return BufferError::Kind::CapacityError;
    q.tokens.insert(q.tokens.end(), words.begin(), words.end());
    return std::nullopt;
}

std::optional<BufferError::Kind> FlatBuffer::read(RequestId r, std::uint64_t start, std::uint64_t count,
                                                  std::vector<std::uint64_t>& words, std::uint32_t& freed) {
    freed = 0;
    words.clear();
    auto it = reqs_.find(r);
    if (it == reqs_.end()) return BufferError::Kind::UnknownRequest;
    auto& q = it->second;
    if (count == 0) return std::nullopt;
    if (start != q.read) return BufferError::Kind::OutOfOrderRead;
    if (start + count > q.tokens.size() / width_) return BufferError::Kind::UnwrittenRange;
    words.assign(q.tokens.begin() + static_cast<std::ptrdiff_t>(start * width_),
                 q.tokens.begin() + static_cast<std::ptrdiff_t>((start + count) * width_));
    q.read = start + count;
    const auto limit = reclaimable(q);
    if (limit > q.freed) {
        freed = limit - q.freed;
        q.freed = limit;
    }
    return std::nullopt;
}

std::optional<BufferError::Kind> FlatBuffer::seal(RequestId r, std::uint32_t& freed) {
    freed = 0;
    auto it = reqs_.find(r);
    if (it == reqs_.end()) return BufferError::Kind::UnknownRequest;
    auto& q = it->second;
    q.sealed = true;
    const auto limit = reclaimable(q);
    if (limit > q.freed) {
        freed = limit - q.freed;
        q.freed = limit;
    }
    return std::nullopt;
}

std::optional<BufferError::Kind> FlatBuffer::release(RequestId r, std::uint32_t& freed) {
    freed = 0;
    auto it = reqs_.find(r);
    if (it == reqs_.end()) return std::nullopt;
    freed = pages_of(it->second.reserved) - it->second.freed;
    reqs_.erase(it);
    return std::nullopt;
}

BufferDiffStats run_buffer_differential(std::uint64_t seed, std::size_t ops) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };
    static constexpr std::uint32_t kPageSizes[] = {1, 2, 3, 4, 8, 16, 128};
    const std::uint32_t ps = kPageSizes[rng() % 7];
    const auto total = static_cast<std::uint32_t>(pick(4, 64));
    const auto width = static_cast<std::uint32_t>(pick(1, 3));
    EmbedBuffer buf(ps, total, width);
    FlatBuffer ref(ps, total, width);
    BufferDiffStats stats;

    std::vector<bool> page_live(total, false);  // per our own bookkeeping
    std::map<PageId, RequestId> owner;

    auto ctx = [&](const std::string& what) {
        std::ostringstream os;
        os << "seed " << seed << " op " << stats.ops << " (ps=" << ps << ", pages=" << total << ", width=" << width
           << "): " << what;
        return os.str();
    };
    auto expect_kind = [&](std::optional<BufferError::Kind> want, auto&& fn) {
        std::optional<BufferError::Kind> got;
        try {
            fn();
        } catch (const BufferError& e) {
            got = e.kind();
        }
        if (got != want) {
            fail(ctx(std::string("error mismatch: buffer ") + (got ? to_string(*got) : "ok") + ", reference " +
                     (want ? to_string(*want) : "ok")));
        }
        if (got) ++stats.errors;
        return !got.has_value();
    };
    auto on_freed = [&](RequestId r, const std::vector<PageId>& freed, std::uint32_t want) {
        if (freed.size() != want) {
            fail(ctx("freed " + std::to_string(freed.size()) + " pages, reference " + std::to_string(want)));
        }
        for (auto p : freed) {
            if (p >= total || !page_live[p]) fail(ctx("double free of page " + std::to_string(p)));
            if (owner[p] != r) fail(ctx("freed page of another request"));
            page_live[p] = false;
        }
        stats.freed += freed.size();
    };
    auto check_state = [&]() {
        if (buf.free_pages() != ref.free_pages()) {
            fail(ctx("free pages " + std::to_string(buf.free_pages()) + " vs " + std::to_string(ref.free_pages())));
        }
        std::uint32_t live = 0;
        for (bool b : page_live) live += b ? 1 : 0;
        if (live + buf.free_pages() != total) fail(ctx("page conservation violated"));
        for (RequestId r = 0; r < 6; ++r) {
            if (buf.has_request(r) != ref.has(r)) fail(ctx("request presence differs"));
            if (!ref.has(r)) continue;
            const auto owned = buf.owned_pages(r);
            if (owned.size() != ref.owned_pages(r)) fail(ctx("owned page count differs"));
            for (auto p : owned) {
                if (!page_live[p] || owner[p] != r) fail(ctx("owned page not live"));
            }
            if (buf.written(r) != ref.written(r) || buf.consumed(r) != ref.consumed(r)) fail(ctx("cursor differs"));
        }
    };

    for (; stats.ops < ops; ++stats.ops) {
        const RequestId r = pick(0, 5);
        const auto op = pick(0, 99);
        if (op < 25) {
            const std::uint64_t tokens = pick(0, 3ull * ps);
            const auto want = ref.alloc(r, tokens);
            std::vector<PageId> got;
            expect_kind(want, [&] { got = buf.alloc_pages(r, tokens); });
            for (auto p : got) {
                if (page_live[p]) fail(ctx("allocated a live page"));
                page_live[p] = true;
                owner[p] = r;
            }
        } else if (op < 57) {
            // One or two requests per write batch, sharing a ragged index.
            std::vector<RequestId> batch{r};
            if (op % 4 == 0) {
                const RequestId r2 = (r + 1) % 6;
                batch.push_back(r2);
            }
            std::vector<std::pair<RequestId, std::uint64_t>> plan;
            std::vector<TokenSpan> spans;
            for (auto q : batch) {
                const std::uint64_t cur = ref.has(q) ? ref.written(q) : 0;
                const std::uint64_t cap = buf.has_request(q) ? buf.reserved(q) : 0;
                const std::uint64_t room = cap > cur ? cap - cur : 0;
                const std::uint64_t count = pick(0, room + 1);
                const std::uint64_t start = pick(0, 19) == 0 ? cur + 1 : cur;
                TokenSpan span{q, start, count, width, {}};
                for (std::uint64_t i = 0; i < count * width; ++i) span.payload.push_back(rng());
                spans.push_back(std::move(span));
                plan.push_back({q, count});
            }
            RaggedIndex idx;
            bool planned = true;
            try {
                idx = buf.plan_write(plan);
                idx.validate(ps);
            } catch (const BufferError& e) {
                if (e.kind() != BufferError::Kind::UnknownRequest) throw;
                planned = false;
            } catch (const std::invalid_argument& e) {
                // Writes past capacity legitimately lack pages.
                planned = true;
            }
            for (const auto& span : spans) {
                if (!planned) {
                    if (ref.has(span.request)) continue;
                    expect_kind(ref.write(span.request, span.start, span.payload),
                                [&] { buf.write_chunk(span, idx); });
                    continue;
                }
                const auto want = ref.write(span.request, span.start, span.payload);
                expect_kind(want, [&] { buf.write_chunk(span, idx); });
            }
        } else if (op < 82) {
            const std::uint64_t cur = ref.has(r) ? ref.consumed(r) : 0;
            const std::uint64_t avail = ref.has(r) ? ref.written(r) - cur : 0;
            const std::uint64_t count = pick(0, avail + 1);
            const std::uint64_t start = pick(0, 19) == 0 ? cur + 1 : cur;
            std::vector<std::uint64_t> words;
            std::uint32_t freed = 0;
            const auto want = ref.read(r, start, count, words, freed);
            ReadResult got;
            const std::pair<RequestId, std::uint64_t> one{r, count};
            const bool ok = expect_kind(want, [&] {
                const auto idx = buf.plan_read(std::span(&one, 1));
                if (!want) idx.validate(ps);
                got = buf.read_chunk(r, start, count, idx);
            });
            if (ok) {
                ++stats.reads;
                if (got.span.payload != words) fail(ctx("read payload differs from reference"));
                if (got.span.checksum() != payload_checksum(words)) fail(ctx("checksum differs"));
                on_freed(r, got.freed, freed);
            }
        } else if (op < 92) {
            std::uint32_t freed = 0;
            const auto want = ref.seal(r, freed);
            std::vector<PageId> got;
            if (expect_kind(want, [&] { got = buf.seal(r); })) on_freed(r, got, freed);
        } else {
            std::uint32_t freed = 0;
            ref.release(r, freed);
            on_freed(r, buf.release(r), freed);
        }
        check_state();
    }

    for (auto r : ref.live()) {
        std::uint32_t freed = 0;
        ref.release(r, freed);
        on_freed(r, buf.release(r), freed);
    }
    if (buf.free_pages() != total) fail(ctx("leak: " + std::to_string(total - buf.free_pages()) + " pages"));
    std::size_t allocs = 0, frees = 0;
    for (const auto& e : buf.events()) (e.kind == PageEventKind::Alloc ? allocs : frees)++;
    if (allocs != frees) fail(ctx("alloc/free event counts differ"));
    return stats;
}

// ------------------------------------------------------------ orchestrator

OrchestrationReference::OrchestrationReference(const SchedulerConfig& cfg)
    : cfg_(cfg), kv_free_(cfg.kv_pages), vis_free_(cfg.visual_pages) {}

std::uint32_t OrchestrationReference::vis_pages_for(std::uint64_t tokens) const {
    return static_cast<std::uint32_t>((tokens + cfg_.visual_page_size - 1) / cfg_.visual_page_size);
}

std::uint32_t OrchestrationReference::kv_pages_for(std::uint64_t tokens) const {
    return static_cast<std::uint32_t>((tokens + cfg_.kv_page_size - 1) / cfg_.kv_page_size);
}

void OrchestrationReference::add(const Request& r) { table_.push_back({r, !r.multimodal(), false, !r.multimodal()}); }

void OrchestrationReference::mark_preprocessed(RequestId id) {
    for (auto& r : table_) {
        if (r.req.id == id) r.preprocessed = true;
    }
}

std::uint64_t OrchestrationReference::get_next_chunk_size(const R& r, std::uint64_t n_p) const {
    const std::uint64_t left = r.req.prompt_tokens() - r.done_tokens;
    const std::uint64_t room = cfg_.p_token_budget - n_p;
    return left < room ? left : room;
}

bool OrchestrationReference::allocated_or_can_alloc_buffer(const R& r) const {
    return r.vis_pages > 0 || vis_pages_for(r.req.visual_tokens) <= vis_free_;
}

bool OrchestrationReference::allocated_or_can_alloc_cache(const R& r) const {
    return r.kv || kv_pages_for(r.req.prompt_tokens() + r.req.output_tokens) <= kv_free_;
}

OrchestrationReference::R* OrchestrationReference::get_next_request(std::size_t& from) {
    for (; from < table_.size(); ++from) {
        auto& r = table_[from];
        if (r.finished || r.in_b) continue;
        if (r.req.multimodal() && !r.encoded) continue;
        ++from;
        return &r;
    }
    return nullptr;
}

OrchestrationReference::R* OrchestrationReference::get_next_multimodal_request_reference(std::size_t& from) {
    for (; from < table_.size(); ++from) {
        auto& r = table_[from];
        if (r.finished || r.in_b || !r.req.multimodal() || r.encoded) continue;
        ++from;
        return &r;
    }
    return nullptr;
}

IterationPlan OrchestrationReference::iterate() {
    IterationPlan out;
    std::uint64_t n_p = 0;
    std::uint64_t n_e = 0;

    // for R in B: continue partially prefilled requests.
    for (auto id : b_) {
        for (auto& r : table_) {
            if (r.req.id != id) continue;
            if (r.done_tokens < r.req.prompt_tokens()) {
                const auto c = get_next_chunk_size(r, n_p);
                if (c > 0) {
                    out.prefill.push_back({id, r.done_tokens, c});
                    n_p += c;
                }
            }
        }
    }

    // Multimodal reference scan into E.
    std::size_t ref_pos = 0;
    R* r_ref = get_next_multimodal_request_reference(ref_pos);
    while (r_ref != nullptr) {
        if (r_ref->preprocessed) {
            if (allocated_or_can_alloc_buffer(*r_ref) && n_e < cfg_.e_token_budget) {
                if (r_ref->vis_pages == 0) {
                    r_ref->vis_pages = vis_pages_for(r_ref->req.visual_tokens);
                    vis_free_ -= r_ref->vis_pages;
                }
                n_e += r_ref->req.patch_tokens;
                r_ref->in_e = true;
                out.encode.push_back({r_ref->req.id, r_ref->req.patch_tokens});
            } else {
                break;
            }
        }
        r_ref = get_next_multimodal_request_reference(ref_pos);
    }

    // New prefill admissions.
    std::size_t new_pos = 0;
    R* r_new = get_next_request(new_pos);
    while (r_new != nullptr && allocated_or_can_alloc_cache(*r_new) && n_p < cfg_.p_token_budget) {
        const auto c = get_next_chunk_size(*r_new, n_p);
        if (c > 0) {
            if (!r_new->kv) {
                kv_free_ -= kv_pages_for(r_new->req.prompt_tokens() + r_new->req.output_tokens);
                r_new->kv = true;
            }
            n_p += c;
            out.prefill.push_back({r_new->req.id, r_new->done_tokens, c});
        } else {
            break;
        }
        r_new = get_next_request(new_pos);
    }

    // chunked_encode_hybrid_batch: sub-executions at unit granularity.
    std::uint64_t acc = 0;
    for (const auto& item : out.encode) {
        for (const auto& r : table_) {
            if (r.req.id != item.id) continue;
            for (auto unit : r.req.encode_units) {
                if (acc != 0 && acc + unit > cfg_.e_token_budget) {
                    out.encode_chunks.push_back(acc);
                    acc = 0;
                }
                acc += unit;
            }
        }
    }
    if (acc != 0) out.encode_chunks.push_back(acc);
    out.n_e = n_e;
    out.n_p = n_p;
    return out;
}

std::vector<RequestId> OrchestrationReference::finish(const IterationPlan& plan) {
    for (const auto& item : plan.encode) {
        for (auto& r : table_) {
            if (r.req.id == item.id) {
                r.encoded = true;
                r.in_e = false;
            }
        }
    }
    std::vector<RequestId> done;
    for (const auto& item : plan.prefill) {
        for (auto& r : table_) {
            if (r.req.id != item.id) continue;
            if (!r.in_b) {
                r.in_b = true;
                b_.push_back(r.req.id);
            }
            const std::uint64_t vis_end = std::min(item.start + item.tokens, r.req.visual_tokens);
            if (item.start < vis_end && r.vis_pages > 0) {
                const std::uint32_t limit = vis_end == r.req.visual_tokens
                                                ? r.vis_pages
                                                : static_cast<std::uint32_t>(vis_end / cfg_.visual_page_size);
                if (limit > r.vis_freed) {
                    vis_free_ += limit - r.vis_freed;
                    r.vis_freed = limit;
                }
            }
            r.done_tokens += item.tokens;
            if (r.done_tokens == r.req.prompt_tokens()) {
                vis_free_ += r.vis_pages - r.vis_freed;
                r.vis_freed = r.vis_pages;
                r.in_b = false;
                r.finished = true;
                b_.erase(std::find(b_.begin(), b_.end(), r.req.id));
                done.push_back(r.req.id);
            }
        }
    }
    return done;
}

void OrchestrationReference::release(RequestId id) {
    for (auto it = table_.begin(); it != table_.end(); ++it) {
        if (it->req.id != id) continue;
        if (it->kv) kv_free_ += kv_pages_for(it->req.prompt_tokens() + it->req.output_tokens);
        table_.erase(it);
        return;
    }
}

namespace {

std::string describe(const IterationPlan& p) {
    std::ostringstream os;
    os << "E={";
    for (const auto& e : p.encode) os << e.id << ":" << e.patch_tokens << " ";
    os << "} B={";
    for (const auto& b : p.prefill) os << b.id << "@" << b.start << "+" << b.tokens << " ";
    os << "} chunks={";
    for (auto c : p.encode_chunks) os << c << " ";
    os << "} n_e=" << p.n_e << " n_p=" << p.n_p;
    return os.str();
}

}  // namespace

OrchestratorScenarioStats run_orchestrator_scenario(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };

    SchedulerConfig cfg;
    cfg.p_token_budget = pick(8, 256);
    cfg.e_token_budget = pick(16, 512);
    cfg.kv_page_size = static_cast<std::uint32_t>(pick(0, 1) ? 16 : 4);
    cfg.kv_pages = static_cast<std::uint32_t>(pick(8, 160));
    cfg.visual_page_size = static_cast<std::uint32_t>(std::vector<std::uint64_t>{4, 16, 32}[rng() % 3]);
    cfg.visual_pages = static_cast<std::uint32_t>(pick(2, 40));

    struct Plan {
        Request req;
        std::size_t arrive;
        std::size_t preprocessed;
        std::size_t decode_iters;
    };
    std::vector<Plan> reqs;
    const auto n = pick(1, 5);
    for (RequestId id = 0; id < n; ++id) {
        Request r;
        r.id = id;
        r.text_tokens = pick(1, 200);
        r.output_tokens = pick(1, 50);
        if (pick(0, 9) >= 3) {
            r.modality = pick(0, 1) ? Modality::Video : Modality::Image;
            const auto units = pick(1, 4);
            for (std::uint64_t u = 0; u < units; ++u) r.encode_units.push_back(pick(4, 300));
            r.patch_tokens = std::accumulate(r.encode_units.begin(), r.encode_units.end(), std::uint64_t{0});
            r.visual_tokens = std::max<std::uint64_t>(1, r.patch_tokens / pick(1, 8));
        }
        const auto arrive = static_cast<std::size_t>(pick(0, 10));
        reqs.push_back({r, arrive, arrive + static_cast<std::size_t>(pick(0, 5)), static_cast<std::size_t>(pick(1, 8))});
    }
    std::stable_sort(reqs.begin(), reqs.end(), [](const Plan& a, const Plan& b) { return a.arrive < b.arrive; });

    PrefillEncodeScheduler sched(cfg);
    OrchestrationReference ref(cfg);
    OrchestratorScenarioStats stats;
    std::map<RequestId, std::size_t> release_at;
    const auto iterations = static_cast<std::size_t>(pick(10, 30));
    for (std::size_t it = 0; it < iterations; ++it) {
        for (const auto& p : reqs) {
            if (p.arrive == it) {
                sched.add(p.req);
                ref.add(p.req);
            }
        }
        for (const auto& p : reqs) {
            if (p.req.multimodal() && p.preprocessed == it) {
                sched.mark_preprocessed(p.req.id);
                ref.mark_preprocessed(p.req.id);
            }
        }
        const auto got = sched.schedule();
        const auto want = ref.iterate();
        if (got.n_p > cfg.p_token_budget) fail("seed " + std::to_string(seed) + ": n_p exceeds the prefill budget");
        std::uint64_t sum_p = 0;
        for (const auto& b : got.prefill) sum_p += b.tokens;
        if (sum_p != got.n_p) fail("seed " + std::to_string(seed) + ": n_p disagrees with the batch");
        if (got != want) {
            fail("seed " + std::to_string(seed) + " iteration " + std::to_string(it) + ":\n  scheduler " +
                 describe(got) + "\n  reference " + describe(want));
        }
        ++stats.iterations;
        stats.encode_items += got.encode.size();
        stats.prefill_items += got.prefill.size();
        const auto done = sched.complete(got);
        if (done != ref.finish(want)) fail("seed " + std::to_string(seed) + ": prefill completions differ");
        for (const auto& p : reqs) {
            if (std::find(done.begin(), done.end(), p.req.id) != done.end()) release_at[p.req.id] = it + p.decode_iters;
        }
        stats.completed += done.size();
        for (auto rit = release_at.begin(); rit != release_at.end();) {
            if (rit->second == it) {
                sched.release(rit->first);
                ref.release(rit->first);
                rit = release_at.erase(rit);
            } else {
                ++rit;
            }
        }
    }
    return stats;
}

// --------------------------------------------------------------- scheduling

SchedInstance random_sched_instance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };
    auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    SchedInstance inst;
    inst.topo = {1, static_cast<std::uint32_t>(pick(2, 8)), static_cast<std::uint32_t>(pick(1, 4))};
    inst.worker_init = pick(0, 1) ? 0.0 : 0.3 * unit();
    const auto segments = pick(1, 40);
    const auto jobs = std::min<std::uint64_t>(segments, pick(1, 8));
    const bool staggered = pick(0, 1) == 1;
    double t = 0.0;
    for (std::uint64_t j = 0; j < jobs; ++j) {
        WorkerLoad w;
        w.job = j;
        w.arrival = t;
        if (staggered) t += 2.0 * unit();
        inst.workers.push_back(w);
    }
    std::vector<double> all;
    for (std::uint64_t s = 0; s < segments; ++s) {
        const double d = unit() < 0.3 ? 1.0 + 9.0 * unit() : 0.1 + unit();
        auto& w = inst.workers[s < jobs ? s : rng() % jobs];
        w.segment_durations.push_back(d);
        w.frames += 1 + rng() % 64;
        all.push_back(d);
    }
    const double mean = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    double var = 0.0;
    for (double d : all) var += (d - mean) * (d - mean);
    var /= static_cast<double>(all.size());
    inst.coefficient_of_variation = std::sqrt(var) / mean;
    return inst;
}

void check_trace_properties(const ScheduleTrace& trace, const std::vector<WorkerLoad>& loads,
                            const EngineTopology& topo, bool stall_free) {
    struct Key {
        std::uint64_t job;
        std::uint32_t rank;
        bool operator<(const Key& o) const { return std::tie(job, rank) < std::tie(o.job, o.rank); }
    };
    std::map<Key, const WorkerLoad*> by_key;
    for (const auto& w : loads) by_key[{w.job, w.rank}] = &w;

    struct Run {
        double start;
        double end;
        std::uint32_t gpu;
        std::int32_t engine;
        Key who;
    };
    std::map<std::tuple<std::uint64_t, std::uint32_t, std::int32_t>, double> starts;
    std::vector<Run> runs;
    for (const auto& e : trace.events) {
        const auto seg = std::make_tuple(e.job, e.rank, e.segment);
        if (e.kind == TraceEventKind::SegmentStart) {
            if (starts.count(seg)) fail("segment started twice");
            starts[seg] = e.time;
        } else if (e.kind == TraceEventKind::SegmentEnd) {
            if (!starts.count(seg)) fail("segment ended without starting");
            const auto* w = by_key.at({e.job, e.rank});
            const double d = w->segment_durations.at(static_cast<std::size_t>(e.segment));
            if (std::abs(e.time - starts[seg] - d) > 1e-9 * std::max(1.0, d)) fail("segment duration altered");
            runs.push_back({starts[seg], e.time, e.gpu, e.engine, {e.job, e.rank}});
        }
    }
    std::size_t total = 0;
    for (const auto& w : loads) total += w.segment_durations.size();
    if (runs.size() != total) fail("not every segment ran exactly once");

    // Engine exclusivity.
    std::map<std::pair<std::uint32_t, std::int32_t>, std::vector<std::pair<double, double>>> per_engine;
    for (const auto& r : runs) per_engine[{r.gpu, r.engine}].push_back({r.start, r.end});
    for (auto& [eng, v] : per_engine) {
        if (eng.second < 0 || static_cast<std::uint32_t>(eng.second) >= topo.engines_per_gpu) fail("bad engine id");
        std::sort(v.begin(), v.end());
        for (std::size_t i = 1; i < v.size(); ++i) {
            if (v[i].first < v[i - 1].second - 1e-12) fail("engine double-booked");
        }
    }

    // Admission cap and FIFO admission, replayed in trace order per GPU.
    std::map<std::uint32_t, int> admitted;
    std::map<std::uint32_t, std::vector<Key>> admit_order;
    std::map<Key, double> ready_at, done_at;
    for (const auto& e : trace.events) {
        if (e.kind == TraceEventKind::WorkerAdmit) {
            if (++admitted[e.gpu] > static_cast<int>(topo.max_decode_tasks)) fail("admission cap exceeded");
            admit_order[e.gpu].push_back({e.job, e.rank});
        } else if (e.kind == TraceEventKind::WorkerDone) {
            --admitted[e.gpu];
            done_at[{e.job, e.rank}] = e.time;
        } else if (e.kind == TraceEventKind::WorkerReady) {
            ready_at[{e.job, e.rank}] = e.time;
        }
    }
    for (const auto& [gpu, order] : admit_order) {
        for (std::size_t i = 1; i < order.size(); ++i) {
            const auto* a = by_key.at(order[i - 1]);
            const auto* b = by_key.at(order[i]);
            if (std::tie(b->arrival, b->job, b->rank) < std::tie(a->arrival, a->job, a->rank)) {
                fail("admission not FIFO");
            }
        }
    }
    if (done_at.size() != loads.size()) fail("a worker never finished");

    if (stall_free) {
        // Work conservation: at every event instant, an idle engine implies
        // no ready worker still has unstarted segments.
        std::set<double> instants;
        for (const auto& e : trace.events) instants.insert(e.time);
        for (double t : instants) {
            for (std::uint32_t g = 0; g < topo.num_gpus; ++g) {
                std::size_t busy = 0;
                for (const auto& r : runs) {
                    if (r.gpu == g && r.start <= t && t < r.end) ++busy;
                }
                if (busy == topo.engines_per_gpu) continue;
                for (const auto& w : loads) {
                    if (w.gpu != g) continue;
                    const Key k{w.job, w.rank};
                    if (!ready_at.count(k) || ready_at[k] > t) continue;
                    std::size_t started = 0;
                    for (const auto& r : runs) {
                        if (r.who.job == k.job && r.who.rank == k.rank && r.start <= t) ++started;
                    }
                    if (started < w.segment_durations.size()) {
                        std::ostringstream os;
                        os << "engine idle at t=" << t << " while job " << k.job << " rank " << k.rank
                           << " had queued segments";
                        fail(os.str());
                    }
                }
            }
        }
        // Current-worker priority: a freed engine continues its worker.
        std::map<Key, std::size_t> started;
        for (std::size_t i = 0; i < trace.events.size(); ++i) {
            const auto& e = trace.events[i];
            const Key k{e.job, e.rank};
            if (e.kind == TraceEventKind::SegmentStart) ++started[k];
            if (e.kind != TraceEventKind::SegmentEnd) continue;
            if (started[k] >= by_key.at(k)->segment_durations.size()) continue;
            bool ok = false;
            for (std::size_t j = i + 1; j < trace.events.size() && trace.events[j].time == e.time; ++j) {
                const auto& n = trace.events[j];
                if (n.kind == TraceEventKind::SegmentStart && n.gpu == e.gpu && n.engine == e.engine) {
                    ok = n.job == e.job && n.rank == e.rank;
                    break;
                }
            }
            if (!ok) fail("freed engine did not continue its own worker");
        }
    } else {
        // Whole-video: engines a worker used serve nobody else until it is done.
        for (const auto& r : runs) {
            for (const auto& o : runs) {
                if (o.gpu != r.gpu || o.engine != r.engine) continue;
                if (o.who.job == r.who.job && o.who.rank == r.who.rank) continue;
                const double first = ready_at.at(r.who);
                const double done = done_at.at(r.who);
                if (o.start >= first - 1e-12 && o.start < done - 1e-12) fail("bound engine served another video");
            }
        }
    }
}

std::vector<MemoryPeak> replay_memory(const ScheduleTrace& trace, MemoryPolicy policy, std::uint32_t num_gpus,
                                      double handoff_delay) {
    std::map<std::uint64_t, double> job_done;
    for (const auto& j : trace.jobs) job_done[j.job] = j.completion;
    std::vector<MemoryPeak> out;
    for (std::uint32_t g = 0; g < num_gpus; ++g) {
        MemoryPeak peak{g, 0, 0.0};
        std::set<double> instants;
        for (const auto& w : trace.workers) {
            if (w.gpu == g) instants.insert(policy == MemoryPolicy::Preallocate ? w.arrival : w.completion);
        }
        for (double t : instants) {
            std::uint64_t resident = 0;
            for (const auto& w : trace.workers) {
                if (w.gpu != g) continue;
                const double from = policy == MemoryPolicy::Preallocate ? w.arrival : w.completion;
                const double to = job_done.at(w.job) + handoff_delay;
                if (from <= t && t <= to) resident += w.frames;
            }
            if (resident > peak.peak_frames) peak = {g, resident, t};
        }
        out.push_back(peak);
    }
    return out;
}

// ----------------------------------------------------------------- alignment

AlignmentCheck run_alignment_instance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };
    const auto where = [&](const std::string& what) { return "seed " + std::to_string(seed) + ": " + what; };

    SyntheticVideoSpec spec;
    const auto gops = pick(1, 20);
    spec.gop_sizes.clear();
    for (std::uint64_t g = 0; g < gops; ++g) spec.gop_sizes.push_back(static_cast<std::uint32_t>(pick(1, 12)));
    spec.num_frames = std::accumulate(spec.gop_sizes.begin(), spec.gop_sizes.end(), 0u);
    spec.codec = std::vector<Codec>{Codec::H264, Codec::H265, Codec::VP9}[rng() % 3];
    const auto meta = synthesize_meta(spec);

    std::vector<std::uint32_t> chosen;
    const double density = 0.1 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
    for (std::uint32_t f = 0; f < spec.num_frames; ++f) {
        if (static_cast<double>(rng() % 1000) / 1000.0 < density) chosen.push_back(f);
    }
    if (chosen.empty()) chosen.push_back(static_cast<std::uint32_t>(rng() % spec.num_frames));
    const auto sel = select_frames(meta, SelectionPolicy::explicit_list(chosen));
    const auto W = static_cast<std::uint32_t>(pick(1, 5));
    const auto N = static_cast<std::uint32_t>(pick(1, 4));
    const auto T = static_cast<std::uint32_t>(pick(1, 6));

    const auto pre = partition(meta, sel, W, N);
    // Work balance is optimal before alignment.
    const auto best = brute_force_min_max_work(meta, chosen, std::size_t{W} * N);
    if (pre.max_segment_work() != best) {
        fail(where("max segment work " + std::to_string(pre.max_segment_work()) + ", optimum " +
                   std::to_string(best)));
    }
    const auto post = align_to_temporal_patch(meta, pre, T);

    // Cover: every target exactly once, in order, segment by segment.
    std::vector<std::uint32_t> seen;
    for (const auto& r : post.ranks) {
        if (r.segments.empty()) fail(where("empty rank after alignment"));
        for (const auto& s : r.segments) {
            if (s.targets.empty()) fail(where("empty segment"));
            seen.insert(seen.end(), s.targets.begin(), s.targets.end());
            if (s.est_work != naive_decode_frames(meta, s.targets)) fail(where("est_work disagrees with frame walk"));
            std::uint64_t span_frames = 0;
            for (const auto& d : s.decode_span) {
                if (d.first_frame != meta.keyframe_indices[d.gop] && meta.codec != Codec::H264) {
                    fail(where("decode span does not start at a keyframe"));
                }
                span_frames += d.frames();
            }
            if (span_frames != s.est_work) fail(where("est_work != sum of decode spans"));
        }
    }
    if (seen != chosen) fail(where("targets not covered exactly once in order"));

    // Divisibility.
    std::uint64_t total = 0;
    for (std::size_t r = 0; r < post.ranks.size(); ++r) {
        const auto have = post.ranks[r].target_count();
        total += have;
        if (r + 1 < post.ranks.size()) {
            if (have % T != 0) fail(where("rank count not divisible by T"));
            if (post.ranks[r].padding_frames != 0) fail(where("padding on a non-final rank"));
        }
    }
    if ((total + post.ranks.back().padding_frames) % T != 0) fail(where("grand total not divisible by T"));
    if (post.ranks.back().padding_frames >= T) fail(where("more padding than needed"));

    // Boundaries: each is the smallest multiple of T at or after the
    // original one, and ranks that would be drained are merged.
    std::vector<std::uint64_t> cum;
    std::uint64_t acc = 0;
    for (const auto& r : pre.ranks) cum.push_back(acc += r.target_count());
    std::vector<std::uint64_t> expect;
    std::vector<std::uint64_t> origin;
    for (std::size_t r = 0; r + 1 < cum.size(); ++r) {
        const auto up = (cum[r] + T - 1) / T * T;
        if (up < cum[r + 1]) {
            expect.push_back(up);
            origin.push_back(cum[r]);
        }
    }
    std::vector<std::uint64_t> actual;
    acc = 0;
    for (std::size_t r = 0; r + 1 < post.ranks.size(); ++r) actual.push_back(acc += post.ranks[r].target_count());
    if (actual != expect) fail(where("alignment boundaries differ from the minimal upward positions"));

    AlignmentCheck out;
    out.merges = post.merged_ranks.size();
    if (post.effective_world_size + out.merges != pre.effective_world_size) fail(where("merge bookkeeping"));

    // Every legal placement of each boundary is enumerated; none may lie
    // between the original boundary and the chosen one.
    std::uint64_t bound = 0;
    for (std::size_t r = 0; r + 1 < post.ranks.size(); ++r) {
        std::vector<std::vector<std::uint32_t>> left, right;
        for (const auto& s : post.ranks[r].segments) left.push_back(s.targets);
        for (const auto& s : post.ranks[r + 1].segments) right.push_back(s.targets);
        bool has_zero = false;
        for (const auto& alt : legal_shifts(meta, left, right, T)) {
            if (alt.shift == 0) has_zero = true;
            const auto pos = static_cast<std::int64_t>(actual[r]) + alt.shift;
            if (alt.shift < 0 && pos >= static_cast<std::int64_t>(origin[r])) {
                fail(where("a smaller upward adjustment was legal"));
            }
        }
        if (!has_zero) fail(where("chosen boundary is not a legal placement"));
        if (actual[r] > origin[r]) bound += chosen[actual[r] - 1] - chosen[origin[r] - 1];
        ++out.boundaries;
    }
    // Moving targets up costs at most the frames between the left rank's old
    // last target and the last target it gained.
    if (post.total_work() > pre.total_work() + bound) {
        fail(where("alignment added " + std::to_string(post.total_work() - pre.total_work()) +
                   " frames, bound " + std::to_string(bound)));
    }
    return out;
}

// -------------------------------------------------------------------- parser

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

FuzzStats run_container_fuzz(const std::vector<std::vector<std::uint8_t>>& seeds, std::size_t cases,
                             std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    FuzzStats stats;
    for (; stats.cases < cases; ++stats.cases) {
        auto bytes = seeds[rng() % seeds.size()];
        const auto mode = rng() % 5;
        if (bytes.empty()) bytes.push_back(0);
        switch (mode) {
            case 0:  // truncation
                bytes.resize(rng() % bytes.size());
                break;
            case 1: {  // byte flips
                const auto flips = 1 + rng() % 8;
                for (std::uint64_t i = 0; i < flips; ++i) bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
                break;
            }
            case 2: {  // overwrite an aligned 32-bit word, often a size or count field
                if (bytes.size() < 4) break;
                const auto at = (rng() % (bytes.size() / 4)) * 4;
                static constexpr std::uint32_t kInteresting[] = {0, 1, 7, 8, 9, 16, 0x7fffffff, 0xffffffff, 0x10000};
                const std::uint32_t v = rng() % 2 ? kInteresting[rng() % 9] : static_cast<std::uint32_t>(rng());
                for (int k = 0; k < 4; ++k) bytes[at + k] = static_cast<std::uint8_t>(v >> (24 - 8 * k));
                break;
            }
            case 3: {  // splice a slice of another seed
                const auto& other = seeds[rng() % seeds.size()];
                if (other.empty()) break;
                const auto from = rng() % other.size();
                const auto len = std::min<std::size_t>(other.size() - from, 1 + rng() % 64);
                const auto at = rng() % bytes.size();
                bytes.insert(bytes.begin() + static_cast<std::ptrdiff_t>(at), other.begin() + static_cast<std::ptrdiff_t>(from),
                             other.begin() + static_cast<std::ptrdiff_t>(from + len));
                break;
            }
            default: {  // delete a range
                const auto at = rng() % bytes.size();
                const auto len = std::min<std::size_t>(bytes.size() - at, 1 + rng() % 32);
                bytes.erase(bytes.begin() + static_cast<std::ptrdiff_t>(at),
                            bytes.begin() + static_cast<std::ptrdiff_t>(at + len));
                break;
            }
        }
        try {
            const auto meta = parse_container(bytes);
            try {
                meta.validate();
            } catch (const std::exception& e) {
                fail("fuzz case " + std::to_string(stats.cases) + ": invalid VideoMeta accepted: " + e.what());
            }
            ++stats.parsed;
        } catch (const ContainerError&) {
            ++stats.structured_errors;
        } catch (const std::runtime_error& e) {
            if (std::string(e.what()).rfind("fuzz case", 0) == 0) throw;
            fail("fuzz case " + std::to_string(stats.cases) + ": unstructured error: " + e.what());
        } catch (const std::exception& e) {
            fail("fuzz case " + std::to_string(stats.cases) + ": unstructured error: " + e.what());
        }
    }
    return stats;
}

}  // namespace mmsim::testing
