#include "mmsim/collective_write_queue.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "mmsim/errors.hpp"

namespace mmsim {

CollectiveWriteQueue::CollectiveWriteQueue(EmbedBuffer& buffer, std::uint32_t producers, double timeout)
    : buffer_(buffer), producers_(producers), timeout_(timeout) {
    if (producers == 0) throw std::invalid_argument("producers must be >= 1");
    if (producers != buffer.num_shards()) throw std::invalid_argument("producers must equal buffer shard count");
}

void CollectiveWriteQueue::submit(std::uint64_t write_id, std::uint32_t producer, TokenSpan chunk, double now) {
    if (producer >= producers_) throw std::invalid_argument("producer index out of range");
    if (chunk.width != 1 || chunk.payload.size() != chunk.count) {
        throw std::invalid_argument("chunk must carry one payload word per token");
    }
    {
        std::lock_guard lock(mu_);
        if (std::find(aborted_.begin(), aborted_.end(), write_id) != aborted_.end()) {
            throw BufferError(BufferError::Kind::PartialSubmission,
                              "write " + std::to_string(write_id) + " already timed out");
        }
        auto it = std::find_if(queue_.begin(), queue_.end(), [&](const Pending& p) { return p.write_id == write_id; });
        if (it == queue_.end()) {
            queue_.push_back({write_id, now + timeout_, std::vector<std::optional<TokenSpan>>(producers_), 0});
            it = std::prev(queue_.end());
        }
        auto& slot = it->chunks[producer];
        if (slot) throw std::invalid_argument("duplicate chunk for write " + std::to_string(write_id));
        for (const auto& other : it->chunks) {
            if (other && (other->request != chunk.request || other->start != chunk.start ||
                          other->count != chunk.count)) {
                throw std::invalid_argument("chunks of one write disagree on token range");
            }
        }
        slot = std::move(chunk);
        ++it->present;
    }
    cv_.notify_all();
}

CommitRecord CollectiveWriteQueue::commit_head() {
    Pending head = std::move(queue_.front());
    queue_.pop_front();
    const TokenSpan& first = *head.chunks.front();
    TokenSpan merged;
    merged.request = first.request;
    merged.start = first.start;
    merged.count = first.count;
    merged.width = producers_;
    merged.payload.resize(first.count * producers_);
    for (std::uint32_t p = 0; p < producers_; ++p) {
        const auto& c = *head.chunks[p];
        for (std::uint64_t i = 0; i < c.count; ++i) merged.payload[i * producers_ + p] = c.payload[i];
    }
    const std::pair<RequestId, std::uint64_t> batch{merged.request, merged.count};
    buffer_.write_chunk(merged, buffer_.plan_write(std::span(&batch, 1)));
    CommitRecord rec{head.write_id, merged.request, merged.start, merged.count, merged.checksum()};
    commits_.push_back(rec);
    return rec;
}

void CollectiveWriteQueue::drop_head() {
    const auto id = queue_.front().write_id;
    const auto present = queue_.front().present;
    queue_.pop_front();
    aborted_.push_back(id);
    throw BufferError(BufferError::Kind::PartialSubmission,
                      "write " + std::to_string(id) + " timed out with " + std::to_string(present) + " of " +
                          std::to_string(producers_) + " chunks");
}

std::vector<CommitRecord> CollectiveWriteQueue::poll(double now) {
    std::lock_guard lock(mu_);
    std::vector<CommitRecord> out;
    while (!queue_.empty()) {
        if (queue_.front().present == producers_) {
            out.push_back(commit_head());
        } else if (now > queue_.front().deadline) {
            drop_head();
        } else {
            break;
        }
    }
    return out;
}

std::optional<CommitRecord> CollectiveWriteQueue::commit_next(std::chrono::milliseconds wait) {
    std::unique_lock lock(mu_);
    const bool ready = cv_.wait_for(lock, wait, [&] {
        return !queue_.empty() && queue_.front().present == producers_;
    });
    if (ready) return commit_head();
    if (queue_.empty()) return std::nullopt;
    drop_head();
    return std::nullopt;
}

std::vector<CommitRecord> CollectiveWriteQueue::commits() const {
    std::lock_guard lock(mu_);
    return commits_;
}

std::size_t CollectiveWriteQueue::pending() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

}  // namespace mmsim
