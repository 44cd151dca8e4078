#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace mmsim {

using RequestId = std::uint64_t;
using PageId = std::uint32_t;

/// FNV-1a over the little-endian bytes of each word.
std::uint64_t payload_checksum(std::span<const std::uint64_t> words);

/// A contiguous run of tokens of one request. Each token carries `width`
/// payload words, one per buffer shard, stored token-major.
struct TokenSpan {
    RequestId request = 0;
    std::uint64_t start = 0;
    std::uint64_t count = 0;
    std::uint32_t width = 1;
    std::vector<std::uint64_t> payload;

    std::uint64_t end() const { return start + count; }
    std::uint64_t checksum() const { return payload_checksum(payload); }
    bool operator==(const TokenSpan&) const = default;
};

/// Per-iteration addressing for a batch of requests, CSR style.
struct RaggedIndex {
    struct Range {
        std::uint64_t start = 0;
        std::uint64_t end = 0;
        std::uint64_t count = 0;
        bool operator==(const Range&) const = default;
    };

    std::vector<RequestId> requests;
    std::vector<Range> pv_indptr;
    std::vector<PageId> pv_page_indices;
    /// requests.size() + 1 offsets into pv_page_indices.
    std::vector<std::uint32_t> pv_page_indptr;
    /// Tokens handled for each request in earlier iterations.
    std::vector<std::uint64_t> pv_cu_page_len;

    /// Position of `req` in this index, or requests.size().
    std::size_t find(RequestId req) const;
    std::span<const PageId> pages_of(std::size_t i) const;

    /// Throws std::invalid_argument if the offsets are malformed or the
    /// referenced pages cannot hold the tokens starting at cu mod page_size.
    void validate(std::uint32_t page_size) const;

    bool operator==(const RaggedIndex&) const = default;
};

struct ReadResult {
    TokenSpan span;
    std::vector<PageId> freed;
};

enum class PageEventKind { Alloc, Free };

struct PageEvent {
    std::uint64_t seq = 0;
    PageEventKind kind = PageEventKind::Alloc;
    RequestId request = 0;
    PageId page = 0;
};

/// Paged token store. One page table is shared by `num_shards` payload
/// stores, so a page id addresses the same slot in every shard.
///
/// Per request: reserved (page capacity) >= written >= read. Reads are
/// prefix-ordered and free every page whose tokens are all consumed.
class EmbedBuffer {
public:
    EmbedBuffer(std::uint32_t page_size, std::uint32_t total_pages, std::uint32_t num_shards = 1);

    std::uint32_t page_size() const { return page_size_; }
    std::uint32_t total_pages() const { return total_pages_; }
    std::uint32_t num_shards() const { return num_shards_; }
    std::uint32_t free_pages() const;

    /// Pages needed to grow `req` by `tokens` beyond its current reservation.
    std::uint32_t pages_needed(RequestId req, std::uint64_t tokens) const;
    bool can_alloc(RequestId req, std::uint64_t tokens) const;

    /// Reserves `tokens` more tokens for `req`, appending the minimal number
    /// of pages. All-or-nothing: throws OutOfPages leaving state unchanged.
    std::vector<PageId> alloc_pages(RequestId req, std::uint64_t tokens);

    RaggedIndex plan_write(std::span<const std::pair<RequestId, std::uint64_t>> batch) const;
    RaggedIndex plan_read(std::span<const std::pair<RequestId, std::uint64_t>> batch) const;

    /// Throws GapError, CapacityError, UseAfterFree or UnknownRequest.
    void write_chunk(const TokenSpan& span, const RaggedIndex& idx);

    /// Consumes [start, start + count). Throws OutOfOrderRead,
    /// UnwrittenRange, UseAfterFree or UnknownRequest.
    ReadResult read_chunk(RequestId req, std::uint64_t start, std::uint64_t count, const RaggedIndex& idx);

    /// No more writes will arrive; the trailing partial page becomes
    /// freeable once read. Returns pages freed immediately.
    std::vector<PageId> seal(RequestId req);

    /// Drops the request, returning every page it still owns.
    std::vector<PageId> release(RequestId req);

    bool has_request(RequestId req) const;
    std::uint64_t written(RequestId req) const;
    std::uint64_t consumed(RequestId req) const;
    std::uint64_t reserved(RequestId req) const;
    /// Live pages of `req` in logical order.
    std::vector<PageId> owned_pages(RequestId req) const;
    std::size_t live_requests() const;

    std::vector<PageEvent> events() const;
    std::string events_csv() const;

private:
    struct ReqState {
        std::vector<PageId> pages;       // logical page -> physical id
        std::vector<bool> live;          // logical page still owned
        std::uint64_t reserved_tokens = 0;
        std::uint64_t written = 0;
        std::uint64_t read = 0;
        bool sealed = false;
        std::uint64_t capacity(std::uint32_t ps) const { return pages.size() * std::uint64_t{ps}; }
    };

    std::uint32_t pages_needed_locked(RequestId req, std::uint64_t tokens) const;
    RaggedIndex plan(std::span<const std::pair<RequestId, std::uint64_t>> batch, bool for_write) const;
    const ReqState& state(RequestId req) const;
    ReqState& state(RequestId req);
    void check_pages(RequestId req, const ReqState& st, const RaggedIndex& idx, std::size_t at,
                     std::uint64_t cu, std::uint64_t count) const;
    std::vector<PageId> reclaim(RequestId req, ReqState& st);
    void free_page(RequestId req, PageId page);

    std::uint32_t page_size_;
    std::uint32_t total_pages_;
    std::uint32_t num_shards_;
    std::set<PageId> free_;
    std::vector<RequestId> owner_;
    std::vector<bool> owned_;
    std::map<RequestId, ReqState> reqs_;
    std::vector<std::vector<std::uint64_t>> store_;  // [shard][page * page_size + offset]
    std::vector<PageEvent> events_;
    mutable std::mutex mu_;
};

}  // namespace mmsim
