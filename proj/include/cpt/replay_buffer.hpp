#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "cpt/bounded_queue.hpp"
#include "cpt/sample_batch.hpp"

namespace cpt {

struct BufferConfig {
    std::uint64_t capacity_tokens = 0;  // total capacity, in tokens
    std::size_t file_size = 0;          // sequences per file
    std::size_t seq_len = 0;            // tokens per sequence
    std::filesystem::path data_dir;
    std::size_t queue_capacity = 0;     // prefetch items
    std::size_t dtype_bytes = 4;        // token width on disk: 2 or 4

    // Persist metadata every m-th add (1 = after every add).
    std::size_t metadata_write_interval = 1;
    // Prefetcher sleep when the queue is full or nothing is readable.
    std::chrono::milliseconds idle_interval{100};
    std::uint64_t seed = 0;

    std::size_t file_count() const;
    void validate() const;
};

struct BufferState {
    std::vector<std::uint64_t> sizes;  // filled rows per file
    std::uint64_t total = 0;           // rows ever added
    std::size_t file_count = 0;
};

struct PrefetchItem {
    SampleBatch samples;  // the filled region of one file at read time
    std::size_t file_index = 0;
};

/**
 * Disk-backed replay store of fixed-length token sequences.
 *
 * Rows live in `file_count()` flat binary files (`buffer_{i}.bin`), raw
 * little-endian token ids with no header, addressed by row offset. Adds
 * append to the first file with room; once every file is full, a random
 * file is chosen and random existing row slots are overwritten in place.
 * State (sizes, total) persists in `metadata.json` and is restored when a
 * buffer is reopened on the same directory.
 *
 * Sampling goes through a bounded prefetch queue. With start_prefetch() a
 * background thread keeps the queue topped up with whole-file reads; without
 * it, get_batch() performs the same read inline, which keeps single-threaded
 * runs bit-reproducible.
 *
 * Concurrency contract: one writer calling add()/save_metadata(), one
 * consumer calling get_batch(), plus the internal prefetch thread.
 */
class ReplayBuffer {
public:
    explicit ReplayBuffer(BufferConfig config);
    ~ReplayBuffer();

    ReplayBuffer(const ReplayBuffer&) = delete;
    ReplayBuffer& operator=(const ReplayBuffer&) = delete;

    /// Append a batch, or overwrite random slots once every file is full.
    /// Throws OversizeBatchError when the batch exceeds one file.
    void add(const SampleBatch& batch);

    /// Launch the background prefetcher. Idempotent.
    void start_prefetch();

    /// Stop and join the prefetcher. Idempotent; also runs on destruction.
    void stop_prefetch();

    /// Pop one prefetched item and return floor(fraction * effective_batch_size)
    /// rows sampled from it without replacement (with replacement when the
    /// item is shorter). Empty result when nothing is available.
    SampleBatch get_batch(double fraction, std::size_t effective_batch_size);

    /// Persist sizes/total to metadata.json now.
    void save_metadata();

    /// Parse a metadata file; ParseError names any missing or mistyped field.
    static BufferState load_metadata(const std::filesystem::path& path);

    BufferState state() const;
    const BufferConfig& config() const noexcept { return config_; }
    std::size_t file_count() const noexcept { return files_.size(); }
    std::size_t queue_occupancy() const { return queue_.size(); }
    bool prefetch_running() const noexcept { return prefetch_running_.load(); }

    std::filesystem::path file_path(std::size_t index) const;
    std::filesystem::path metadata_path() const;

private:
    void create_or_open_files();
    void restore_or_init_metadata();
    void write_rows_locked(std::size_t file_index, std::uint64_t row_offset,
                           const std::uint32_t* tokens, std::size_t n_rows);
    SampleBatch read_rows_locked(std::size_t file_index, std::uint64_t n_rows);
    // One prefetch iteration: pick a nonempty file, read its filled region.
    std::optional<PrefetchItem> prefetch_once();
    void prefetch_loop();
    void persist_metadata_locked_snapshot();

    BufferConfig config_;
    mutable std::mutex mutex_;  // guards sizes_, total_, files_, rng_
    std::vector<std::uint64_t> sizes_;
    std::uint64_t total_ = 0;
    std::vector<std::unique_ptr<std::fstream>> files_;
    std::mt19937_64 rng_;
    std::size_t adds_since_persist_ = 0;

    BoundedQueue<PrefetchItem> queue_;
    std::thread prefetch_thread_;
    std::atomic<bool> prefetch_running_{false};
    std::atomic<bool> stop_requested_{false};
};

}  // namespace cpt
