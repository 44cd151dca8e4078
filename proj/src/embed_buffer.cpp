#include "mmsim/embed_buffer.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>

#include "mmsim/errors.hpp"

namespace mmsim {

std::uint64_t payload_checksum(std::span<const std::uint64_t> words) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto w : words) {
        for (int b = 0; b < 8; ++b) {
            h ^= (w >> (8 * b)) & 0xff;
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::size_t RaggedIndex::find(RequestId req) const {
    return static_cast<std::size_t>(std::find(requests.begin(), requests.end(), req) - requests.begin());
}

std::span<const PageId> RaggedIndex::pages_of(std::size_t i) const {
    return std::span(pv_page_indices).subspan(pv_page_indptr.at(i), pv_page_indptr.at(i + 1) - pv_page_indptr[i]);
}

void RaggedIndex::validate(std::uint32_t page_size) const {
    const std::size_t n = requests.size();
    if (pv_indptr.size() != n || pv_cu_page_len.size() != n || pv_page_indptr.size() != n + 1) {
        throw std::invalid_argument("ragged index arrays disagree in length");
    }
    if (pv_page_indptr.front() != 0 || pv_page_indptr.back() != pv_page_indices.size()) {
        throw std::invalid_argument("pv_page_indptr does not bracket pv_page_indices");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (pv_page_indptr[i + 1] < pv_page_indptr[i]) throw std::invalid_argument("pv_page_indptr decreases");
        const auto& r = pv_indptr[i];
        if (r.end < r.start || r.count != r.end - r.start) throw std::invalid_argument("pv_indptr count mismatch");
        const std::uint64_t offset = pv_cu_page_len[i] % page_size;
        const std::uint64_t need = r.count == 0 ? 0 : (offset + r.count + page_size - 1) / page_size;
        if (pv_page_indptr[i + 1] - pv_page_indptr[i] < need) {
            throw std::invalid_argument("too few pages for the iteration's tokens");
        }
    }
}

EmbedBuffer::EmbedBuffer(std::uint32_t page_size, std::uint32_t total_pages, std::uint32_t num_shards)
    : page_size_(page_size), total_pages_(total_pages), num_shards_(num_shards),
      owner_(total_pages, 0), owned_(total_pages, false),
      store_(num_shards, std::vector<std::uint64_t>(std::size_t{total_pages} * page_size, 0)) {
    if (page_size == 0) throw std::invalid_argument("page_size must be >= 1");
    if (num_shards == 0) throw std::invalid_argument("num_shards must be >= 1");
    for (PageId p = 0; p < total_pages; ++p) free_.insert(p);
}

std::uint32_t EmbedBuffer::free_pages() const {
    std::lock_guard lock(mu_);
    return static_cast<std::uint32_t>(free_.size());
}

const EmbedBuffer::ReqState& EmbedBuffer::state(RequestId req) const {
    auto it = reqs_.find(req);
    if (it == reqs_.end()) {
        throw BufferError(BufferError::Kind::UnknownRequest, "unknown request " + std::to_string(req));
    }
    return it->second;
}

EmbedBuffer::ReqState& EmbedBuffer::state(RequestId req) {
    return const_cast<ReqState&>(std::as_const(*this).state(req));
}

std::uint32_t EmbedBuffer::pages_needed_locked(RequestId req, std::uint64_t tokens) const {
    auto it = reqs_.find(req);
    const std::uint64_t have = it == reqs_.end() ? 0 : it->second.pages.size();
    const std::uint64_t want_tokens = (it == reqs_.end() ? 0 : it->second.reserved_tokens) + tokens;
    const std::uint64_t want = (want_tokens + page_size_ - 1) / page_size_;
    return static_cast<std::uint32_t>(want > have ? want - have : 0);
}

std::uint32_t EmbedBuffer::pages_needed(RequestId req, std::uint64_t tokens) const {
    std::lock_guard lock(mu_);
    return pages_needed_locked(req, tokens);
}

bool EmbedBuffer::can_alloc(RequestId req, std::uint64_t tokens) const {
    std::lock_guard lock(mu_);
    return pages_needed_locked(req, tokens) <= free_.size();
}

std::vector<PageId> EmbedBuffer::alloc_pages(RequestId req, std::uint64_t tokens) {
    std::lock_guard lock(mu_);
    const auto need = pages_needed_locked(req, tokens);
    if (need > free_.size()) {
        throw BufferError(BufferError::Kind::OutOfPages, "request " + std::to_string(req) + " needs " +
                                                             std::to_string(need) + " pages, " +
                                                             std::to_string(free_.size()) + " free");
    }
    auto& st = reqs_[req];
    st.reserved_tokens += tokens;
    std::vector<PageId> got;
    got.reserve(need);
    for (std::uint32_t i = 0; i < need; ++i) {
        const PageId p = *free_.begin();
        free_.erase(free_.begin());
        owned_[p] = true;
        owner_[p] = req;
        st.pages.push_back(p);
        st.live.push_back(true);
        got.push_back(p);
        events_.push_back({events_.size(), PageEventKind::Alloc, req, p});
    }
    return got;
}

RaggedIndex EmbedBuffer::plan(std::span<const std::pair<RequestId, std::uint64_t>> batch, bool for_write) const {
    std::lock_guard lock(mu_);
    RaggedIndex idx;
    idx.pv_page_indptr.push_back(0);
    for (const auto& [req, count] : batch) {
        const auto& st = state(req);
        const std::uint64_t cu = for_write ? st.written : st.read;
        idx.requests.push_back(req);
        idx.pv_indptr.push_back({cu, cu + count, count});
        idx.pv_cu_page_len.push_back(cu);
        if (count > 0) {
            const std::uint64_t first = cu / page_size_;
            const std::uint64_t last = (cu + count - 1) / page_size_;
            for (std::uint64_t lp = first; lp <= last && lp < st.pages.size(); ++lp) {
                idx.pv_page_indices.push_back(st.pages[lp]);
            }
        }
        idx.pv_page_indptr.push_back(static_cast<std::uint32_t>(idx.pv_page_indices.size()));
    }
    return idx;
}

RaggedIndex EmbedBuffer::plan_write(std::span<const std::pair<RequestId, std::uint64_t>> batch) const {
    return plan(batch, true);
}

RaggedIndex EmbedBuffer::plan_read(std::span<const std::pair<RequestId, std::uint64_t>> batch) const {
    return plan(batch, false);
}

void EmbedBuffer::check_pages(RequestId req, const ReqState& st, const RaggedIndex& idx, std::size_t at,
                              std::uint64_t cu, std::uint64_t count) const {
    if (idx.pv_cu_page_len[at] != cu || idx.pv_indptr[at].count != count || idx.pv_indptr[at].start != cu) {
        throw BufferError(BufferError::Kind::GapError, "ragged index does not match request cursor");
    }
    const auto pages = idx.pages_of(at);
    const std::uint64_t first = cu / page_size_;
    const std::uint64_t need = count == 0 ? 0 : (cu + count - 1) / page_size_ - first + 1;
    if (pages.size() < need) throw BufferError(BufferError::Kind::CapacityError, "index lacks pages");
    for (std::uint64_t k = 0; k < need; ++k) {
        const PageId p = pages[k];
        const std::uint64_t lp = first + k;
        if (p >= total_pages_ || !owned_[p] || owner_[p] != req || lp >= st.pages.size() || st.pages[lp] != p ||
            !st.live[lp]) {
            throw BufferError(BufferError::Kind::UseAfterFree,
                              "page " + std::to_string(p) + " is not live for request " + std::to_string(req));
        }
    }
}

void EmbedBuffer::write_chunk(const TokenSpan& span, const RaggedIndex& idx) {
    std::lock_guard lock(mu_);
    auto& st = state(span.request);
    if (span.start != st.written) {
        throw BufferError(BufferError::Kind::GapError, "write at " + std::to_string(span.start) +
                                                           " but request has " + std::to_string(st.written));
    }
    if (span.width != num_shards_ || span.payload.size() != span.count * num_shards_) {
        throw std::invalid_argument("span payload does not match buffer shard width");
    }
    if (st.sealed && span.count > 0) throw BufferError(BufferError::Kind::CapacityError, "request is sealed");
    if (span.end() > st.capacity(page_size_)) {
        throw BufferError(BufferError::Kind::CapacityError, "write past reserved pages");
    }
    const auto at = idx.find(span.request);
    if (at == idx.requests.size()) throw BufferError(BufferError::Kind::GapError, "request missing from index");
    check_pages(span.request, st, idx, at, span.start, span.count);

    const auto pages = idx.pages_of(at);
    const std::uint64_t first = span.start / page_size_;
    for (std::uint64_t i = 0; i < span.count; ++i) {
        const std::uint64_t linear = span.start + i;
        const PageId p = pages[linear / page_size_ - first];
        const std::size_t slot = std::size_t{p} * page_size_ + linear % page_size_;
        for (std::uint32_t s = 0; s < num_shards_; ++s) store_[s][slot] = span.payload[i * num_shards_ + s];
    }
    st.written = span.end();
}

ReadResult EmbedBuffer::read_chunk(RequestId req, std::uint64_t start, std::uint64_t count, const RaggedIndex& idx) {
    std::lock_guard lock(mu_);
    auto& st = state(req);
    ReadResult out;
    out.span.request = req;
    out.span.start = start;
    out.span.count = count;
    out.span.width = num_shards_;
    if (count == 0) return out;
    if (start != st.read) {
        throw BufferError(BufferError::Kind::OutOfOrderRead,
                          "read at " + std::to_string(start) + " but cursor is " + std::to_string(st.read));
    }
    if (start + count > st.written) {
        throw BufferError(BufferError::Kind::UnwrittenRange, "read past written tokens");
    }
    const auto at = idx.find(req);
    if (at == idx.requests.size()) throw BufferError(BufferError::Kind::GapError, "request missing from index");
    check_pages(req, st, idx, at, start, count);

    const auto pages = idx.pages_of(at);
    const std::uint64_t first = start / page_size_;
    out.span.payload.resize(count * num_shards_);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t linear = start + i;
        const PageId p = pages[linear / page_size_ - first];
        const std::size_t slot = std::size_t{p} * page_size_ + linear % page_size_;
        for (std::uint32_t s = 0; s < num_shards_; ++s) out.span.payload[i * num_shards_ + s] = store_[s][slot];
    }
    st.read = start + count;
    out.freed = reclaim(req, st);
    return out;
}

void EmbedBuffer::free_page(RequestId req, PageId page) {
    owned_[page] = false;
    free_.insert(page);
    events_.push_back({events_.size(), PageEventKind::Free, req, page});
}

std::vector<PageId> EmbedBuffer::reclaim(RequestId req, ReqState& st) {
    // Logical pages wholly below the read cursor are consumed; once sealed
    // and drained, every page is.
    std::uint64_t limit = st.read / page_size_;
    if (st.sealed && st.read == st.written) limit = st.pages.size();
    std::vector<PageId> freed;
    for (std::uint64_t lp = 0; lp < limit && lp < st.pages.size(); ++lp) {
        if (!st.live[lp]) continue;
        st.live[lp] = false;
        free_page(req, st.pages[lp]);
        freed.push_back(st.pages[lp]);
    }
    return freed;
}

std::vector<PageId> EmbedBuffer::seal(RequestId req) {
    std::lock_guard lock(mu_);
    auto& st = state(req);
    st.sealed = true;
    return reclaim(req, st);
}

std::vector<PageId> EmbedBuffer::release(RequestId req) {
    std::lock_guard lock(mu_);
    auto it = reqs_.find(req);
    if (it == reqs_.end()) return {};
    std::vector<PageId> freed;
    for (std::size_t lp = 0; lp < it->second.pages.size(); ++lp) {
        if (!it->second.live[lp]) continue;
        free_page(req, it->second.pages[lp]);
        freed.push_back(it->second.pages[lp]);
    }
    reqs_.erase(it);
    return freed;
}

bool EmbedBuffer::has_request(RequestId req) const {
    std::lock_guard lock(mu_);
    return reqs_.count(req) > 0;
}

std::uint64_t EmbedBuffer::written(RequestId req) const {
    std::lock_guard lock(mu_);
    return state(req).written;
}

std::uint64_t EmbedBuffer::consumed(RequestId req) const {
    std::lock_guard lock(mu_);
    return state(req).read;
}

std::uint64_t EmbedBuffer::reserved(RequestId req) const {
    std::lock_guard lock(mu_);
    return state(req).capacity(page_size_);
}

std::vector<PageId> EmbedBuffer::owned_pages(RequestId req) const {
    std::lock_guard lock(mu_);
    const auto& st = state(req);
    std::vector<PageId> out;
    for (std::size_t lp = 0; lp < st.pages.size(); ++lp) {
        if (st.live[lp]) out.push_back(st.pages[lp]);
    }
    return out;
}

std::size_t EmbedBuffer::live_requests() const {
    std::lock_guard lock(mu_);
    return reqs_.size();
}

std::vector<PageEvent> EmbedBuffer::events() const {
    std::lock_guard lock(mu_);
    return events_;
}

std::string EmbedBuffer::events_csv() const {
    std::lock_guard lock(mu_);
    std::string out = "seq,event,request,page\n";
    char line[96];
    for (const auto& e : events_) {
        std::snprintf(line, sizeof line, "%llu,%s,%llu,%u\n", static_cast<unsigned long long>(e.seq),
                      e.kind == PageEventKind::Alloc ? "alloc" : "free", static_cast<unsigned long long>(e.request),
                      e.page);
        out += line;
    }
    return out;
}

}  // namespace mmsim
