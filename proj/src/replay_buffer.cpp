#include "cpt/replay_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <system_error>

#include <json.hpp>

#include "cpt/errors.hpp"
#include "cpt/rng.hpp"

namespace cpt {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

void encode_rows(const std::uint32_t* tokens, std::size_t count, std::size_t dtype_bytes,
                 std::vector<unsigned char>& out) {
    out.resize(count * dtype_bytes);
    unsigned char* p = out.data();
    if (dtype_bytes == 4) {
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t v = tokens[i];
            p[0] = static_cast<unsigned char>(v & 0xff);
            p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
            p[2] = static_cast<unsigned char>((v >> 16) & 0xff);
            p[3] = static_cast<unsigned char>((v >> 24) & 0xff);
            p += 4;
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t v = tokens[i];
            p[0] = static_cast<unsigned char>(v & 0xff);
            p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
            p += 2;
        }
    }
}

void decode_rows(const unsigned char* bytes, std::size_t count, std::size_t dtype_bytes,
                 std::uint32_t* out) {
    if (dtype_bytes == 4) {
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned char* p = bytes + i * 4;
            out[i] = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                     (static_cast<std::uint32_t>(p[2]) << 16) |
                     (static_cast<std::uint32_t>(p[3]) << 24);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned char* p = bytes + i * 2;
            out[i] = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8);
        }
    }
}

template <class T>
T require_field(const json& j, const char* name) {
    if (!j.contains(name)) {
        throw ParseError(name, "missing required field");
    }
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ParseError(name, "wrong type");
    }
}

struct MetadataFile {
    std::uint64_t capacity_tokens;
    std::uint64_t file_size;
    std::uint64_t seq_len;
    std::uint64_t dtype_bytes;
    std::vector<std::uint64_t> sizes;
    std::uint64_t total;
    int format_version;
};

MetadataFile parse_metadata(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("file", "cannot open " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("file", std::string("invalid JSON: ") + e.what());
    }
    MetadataFile m;
    m.capacity_tokens = require_field<std::uint64_t>(j, "capacity_tokens");
    m.file_size = require_field<std::uint64_t>(j, "file_size");
    m.seq_len = require_field<std::uint64_t>(j, "seq_len");
    m.dtype_bytes = require_field<std::uint64_t>(j, "dtype_bytes");
    m.sizes = require_field<std::vector<std::uint64_t>>(j, "sizes");
    m.total = require_field<std::uint64_t>(j, "total");
    m.format_version = require_field<int>(j, "format_version");
    if (m.format_version != kFormatVersion) {
        throw ParseError("format_version",
                         "unsupported version " + std::to_string(m.format_version));
    }
    return m;
}

}  // namespace

std::size_t BufferConfig::file_count() const {
    const std::uint64_t tokens_per_file =
        static_cast<std::uint64_t>(file_size) * static_cast<std::uint64_t>(seq_len);
    return tokens_per_file == 0 ? 0 : static_cast<std::size_t>(capacity_tokens / tokens_per_file);
}

void BufferConfig::validate() const {
    if (seq_len < 1 || file_size < 1) {
        throw std::invalid_argument("BufferConfig: file_size and seq_len must be >= 1");
    }
    if (dtype_bytes != 2 && dtype_bytes != 4) {
        throw std::invalid_argument("BufferConfig: dtype_bytes must be 2 or 4");
    }
    if (queue_capacity < 1) {
        throw std::invalid_argument("BufferConfig: queue_capacity must be >= 1");
    }
    if (metadata_write_interval < 1) {
        throw std::invalid_argument("BufferConfig: metadata_write_interval must be >= 1");
    }
    if (file_count() < 1) {
        throw std::invalid_argument(
            "BufferConfig: capacity_tokens must cover at least one full file");
    }
}

ReplayBuffer::ReplayBuffer(BufferConfig config)
    : config_(std::move(config)),
      rng_(rng::derive_seed(config_.seed, rng::Stream::buffer)),
      queue_(config_.queue_capacity == 0 ? 1 : config_.queue_capacity) {
    config_.validate();
    sizes_.assign(config_.file_count(), 0);

    std::error_code ec;
    std::filesystem::create_directories(config_.data_dir, ec);
    if (ec) {
        throw SetupError("cannot create data_dir " + config_.data_dir.string() + ": " +
                         ec.message());
    }
    restore_or_init_metadata();
    create_or_open_files();
}

ReplayBuffer::~ReplayBuffer() {
    stop_prefetch();
    if (adds_since_persist_ > 0) {
        try {
            save_metadata();
        } catch (...) {
            // Best effort; the store stays readable from the last persisted state.
        }
    }
}

std::filesystem::path ReplayBuffer::file_path(std::size_t index) const {
    return config_.data_dir / ("buffer_" + std::to_string(index) + ".bin");
}

std::filesystem::path ReplayBuffer::metadata_path() const {
    return config_.data_dir / "metadata.json";
}

void ReplayBuffer::restore_or_init_metadata() {
    const auto path = metadata_path();
    if (std::filesystem::exists(path)) {
        const MetadataFile m = parse_metadata(path);
        if (m.seq_len != config_.seq_len || m.dtype_bytes != config_.dtype_bytes ||
            m.file_size != config_.file_size || m.capacity_tokens != config_.capacity_tokens) {
            throw IncompatibleStoreError(
                "existing store at " + config_.data_dir.string() +
                " was written with different parameters (seq_len/dtype/file layout)");
        }
        if (m.sizes.size() != sizes_.size()) {
            throw IncompatibleStoreError("existing store has " + std::to_string(m.sizes.size()) +
                                         " files, config implies " + std::to_string(sizes_.size()));
        }
        for (std::uint64_t s : m.sizes) {
            if (s > config_.file_size) {
                throw IncompatibleStoreError("stored file fill exceeds file_size");
            }
        }
        sizes_ = m.sizes;
        total_ = m.total;
    } else {
        persist_metadata_locked_snapshot();
    }
}

void ReplayBuffer::create_or_open_files() {
    files_.clear();
    files_.reserve(sizes_.size());
    for (std::size_t i = 0; i < sizes_.size(); ++i) {
        const auto path = file_path(i);
        if (!std::filesystem::exists(path)) {
            std::ofstream touch(path, std::ios::binary);
            if (!touch) {
                throw SetupError("cannot create " + path.string());
            }
        }
        auto stream = std::make_unique<std::fstream>(
            path, std::ios::in | std::ios::out | std::ios::binary);
        if (!*stream) {
            throw SetupError("cannot open " + path.string());
        }
        files_.push_back(std::move(stream));
    }
}

void ReplayBuffer::write_rows_locked(std::size_t file_index, std::uint64_t row_offset,
                                     const std::uint32_t* tokens, std::size_t n_rows) {
    static thread_local std::vector<unsigned char> scratch;
    encode_rows(tokens, n_rows * config_.seq_len, config_.dtype_bytes, scratch);
    std::fstream& f = *files_[file_index];
    f.clear();
    f.seekp(static_cast<std::streamoff>(row_offset * config_.seq_len * config_.dtype_bytes));
    f.write(reinterpret_cast<const char*>(scratch.data()),
            static_cast<std::streamsize>(scratch.size()));
    f.flush();
    if (!f) {
        throw std::runtime_error("write failed on " + file_path(file_index).string());
    }
}

SampleBatch ReplayBuffer::read_rows_locked(std::size_t file_index, std::uint64_t n_rows) {
    const std::size_t count = static_cast<std::size_t>(n_rows) * config_.seq_len;
    std::vector<unsigned char> bytes(count * config_.dtype_bytes);
    std::fstream& f = *files_[file_index];
    f.clear();
    f.seekg(0);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (f.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw std::runtime_error("short read on " + file_path(file_index).string());
    }
    SampleBatch batch(config_.seq_len);
    batch.tokens.resize(count);
    decode_rows(bytes.data(), count, config_.dtype_bytes, batch.tokens.data());
    return batch;
}

void ReplayBuffer::add(const SampleBatch& batch) {
    if (batch.empty()) {
        return;
    }
    if (batch.seq_len != config_.seq_len) {
        throw std::invalid_argument("add: batch seq_len does not match buffer");
    }
    const std::size_t n = batch.rows();
    if (n > config_.file_size) {
        throw OversizeBatchError("add: batch of " + std::to_string(n) +
                                 " rows exceeds file_size " + std::to_string(config_.file_size));
    }
    if (config_.dtype_bytes == 2 && batch.max_token() > 0xffff) {
        throw std::invalid_argument("add: token id does not fit 2-byte storage");
    }

    {
        std::lock_guard<std::mutex> lock(mutex_);
        std::size_t target = sizes_.size();
        for (std::size_t i = 0; i < sizes_.size(); ++i) {
            if (sizes_[i] + n <= config_.file_size) {
                target = i;
                break;
            }
        }
        if (target < sizes_.size()) {
            write_rows_locked(target, sizes_[target], batch.tokens.data(), n);
            sizes_[target] += n;
        } else {
            // No file has room: overwrite random existing slots in place.
            const std::size_t i =
                static_cast<std::size_t>(rng::uniform_below(rng_, sizes_.size()));
            const std::uint64_t filled = sizes_[i];
            std::vector<std::uint64_t> slots(n);
            if (filled >= n) {
                // Distinct slots via a partial Fisher-Yates over [0, filled).
                std::vector<std::uint64_t> pool(filled);
                std::iota(pool.begin(), pool.end(), 0);
                for (std::size_t k = 0; k < n; ++k) {
                    const std::uint64_t j = k + rng::uniform_below(rng_, filled - k);
                    std::swap(pool[k], pool[j]);
                    slots[k] = pool[k];
                }
            } else {
                for (std::size_t k = 0; k < n; ++k) {
                    slots[k] = rng::uniform_below(rng_, filled);
                }
            }
            for (std::size_t k = 0; k < n; ++k) {
                write_rows_locked(i, slots[k], batch.tokens.data() + k * config_.seq_len, 1);
            }
        }
        total_ += n;
        adds_since_persist_ += 1;
    }
    if (adds_since_persist_ >= config_.metadata_write_interval) {
        save_metadata();
    }
}

std::optional<PrefetchItem> ReplayBuffer::prefetch_once() {
    std::size_t file_index = 0;
    std::uint64_t rows = 0;
    SampleBatch samples;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        std::vector<std::size_t> nonempty;
        nonempty.reserve(sizes_.size());
        for (std::size_t i = 0; i < sizes_.size(); ++i) {
            if (sizes_[i] > 0) {
                nonempty.push_back(i);
            }
        }
        if (nonempty.empty()) {
            return std::nullopt;
        }
        file_index = nonempty[static_cast<std::size_t>(
            rng::uniform_below(rng_, nonempty.size()))];
        rows = sizes_[file_index];
        samples = read_rows_locked(file_index, rows);
    }
    return PrefetchItem{std::move(samples), file_index};
}

void ReplayBuffer::prefetch_loop() {
    while (!stop_requested_.load()) {
        if (queue_.size() < queue_.capacity()) {
            auto item = prefetch_once();
            if (item) {
                while (!queue_.try_push(std::move(*item))) {
                    if (stop_requested_.load()) {
                        return;
                    }
                    std::this_thread::sleep_for(config_.idle_interval);
                }
                continue;
            }
        }
        std::this_thread::sleep_for(config_.idle_interval);
    }
}

void ReplayBuffer::start_prefetch() {
    if (prefetch_running_.exchange(true)) {
        return;
    }
    stop_requested_.store(false);
    prefetch_thread_ = std::thread([this] { prefetch_loop(); });
}

void ReplayBuffer::stop_prefetch() {
    if (!prefetch_running_.load()) {
        return;
    }
    stop_requested_.store(true);
    if (prefetch_thread_.joinable()) {
        prefetch_thread_.join();
    }
    prefetch_running_.store(false);
}

SampleBatch ReplayBuffer::get_batch(double fraction, std::size_t effective_batch_size) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw std::invalid_argument("get_batch: fraction must be in (0, 1]");
    }
    const std::size_t want = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(effective_batch_size)));
    if (want == 0) {
        return SampleBatch(config_.seq_len);
    }

    std::optional<PrefetchItem> item = queue_.try_pop();
    if (!item && !prefetch_running_.load()) {
        item = prefetch_once();
    }
    if (!item) {
        return SampleBatch(config_.seq_len);
    }

    const std::size_t have = item->samples.rows();
    SampleBatch out(config_.seq_len);
    out.tokens.reserve(want * config_.seq_len);

    std::lock_guard<std::mutex> lock(mutex_);
    if (have >= want) {
        // Uniform subset without replacement.
        std::vector<std::size_t> pool(have);
        std::iota(pool.begin(), pool.end(), 0);
        for (std::size_t k = 0; k < want; ++k) {
            const std::size_t j =
                k + static_cast<std::size_t>(rng::uniform_below(rng_, have - k));
            std::swap(pool[k], pool[j]);
            out.append_row(item->samples.row(pool[k]));
        }
    } else {
        for (std::size_t k = 0; k < want; ++k) {
            const std::size_t j = static_cast<std::size_t>(rng::uniform_below(rng_, have));
            out.append_row(item->samples.row(j));
        }
    }
    return out;
}

void ReplayBuffer::persist_metadata_locked_snapshot() {
    json j;
    j["capacity_tokens"] = config_.capacity_tokens;
    j["file_size"] = config_.file_size;
    j["seq_len"] = config_.seq_len;
    j["dtype_bytes"] = config_.dtype_bytes;
    j["sizes"] = sizes_;
    j["total"] = total_;
    j["format_version"] = kFormatVersion;

    const auto path = metadata_path();
    const auto tmp = config_.data_dir / "metadata.json.tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

void ReplayBuffer::save_metadata() {
    std::lock_guard<std::mutex> lock(mutex_);
    persist_metadata_locked_snapshot();
    adds_since_persist_ = 0;
}

BufferState ReplayBuffer::load_metadata(const std::filesystem::path& path) {
    const MetadataFile m = parse_metadata(path);
    BufferState state;
    state.sizes = m.sizes;
    state.total = m.total;
    state.file_count = m.sizes.size();
    return state;
}

BufferState ReplayBuffer::state() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return BufferState{sizes_, total_, sizes_.size()};
}

}  // namespace cpt
