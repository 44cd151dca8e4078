#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

#include "mmsim/embed_buffer.hpp"

namespace mmsim {

/// One committed logical write.
struct CommitRecord {
    std::uint64_t write_id = 0;
    RequestId request = 0;
    std::uint64_t start = 0;
    std::uint64_t count = 0;
    std::uint64_t checksum = 0;

    bool operator==(const CommitRecord&) const = default;
};

/// Multi-producer, single-consumer ordering for sharded buffer writes.
///
/// Each logical write is split across `producers` shards; producer p
/// supplies the p-th payload word of every token. Writes commit one at a
/// time, FIFO by the enqueue of their first chunk, and only once all chunks
/// are present. A write whose chunks are still incomplete when its deadline
/// passes is dropped with zero tokens committed.
class CollectiveWriteQueue {
public:
    CollectiveWriteQueue(EmbedBuffer& buffer, std::uint32_t producers, double timeout);

    /// `chunk.width` must be 1 and `chunk.payload.size() == chunk.count`.
    /// Throws PartialSubmission for a write that already timed out and
    /// std::invalid_argument for mismatched or duplicate chunks.
    void submit(std::uint64_t write_id, std::uint32_t producer, TokenSpan chunk, double now = 0.0);

    /// Simulated-time consumer: commits every ready write at the head.
    /// Throws PartialSubmission if the head is incomplete past its deadline;
    /// the write is removed before throwing so a later poll continues.
    std::vector<CommitRecord> poll(double now);

    /// Threaded consumer: waits up to `wait` for the head write to become
    /// complete and commits it. Returns nullopt if the queue stays empty;
    /// throws PartialSubmission if the head stays incomplete.
    std::optional<CommitRecord> commit_next(std::chrono::milliseconds wait);

    std::vector<CommitRecord> commits() const;
    std::size_t pending() const;

private:
    struct Pending {
        std::uint64_t write_id;
        double deadline;
        std::vector<std::optional<TokenSpan>> chunks;
        std::uint32_t present = 0;
    };

    CommitRecord commit_head();
    void drop_head();

    EmbedBuffer& buffer_;
    std::uint32_t producers_;
    double timeout_;
    std::deque<Pending> queue_;
    std::vector<std::uint64_t> aborted_;
    std::vector<CommitRecord> commits_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
};

}  // namespace mmsim
