#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/matrix.hpp"
#include "omoe/optim.hpp"

namespace omoe {

// Container layout (little-endian throughout):
//   magic "OMOE" | version u32 | tensor count u64
//   per tensor: name_len u32 | name bytes | rank u32 | dims u64[rank] |
//               absolute byte offset u64
//   data section: raw f64 entries, row-major, in table order.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'O', 'M', 'O', 'E'};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CorruptCheckpoint("unexpected end of file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CorruptCheckpoint("cannot open " + path + " for writing");

    // table size must be known to compute absolute data offsets
    std::uint64_t table_bytes = 0;
    for (const auto& [name, m] : store.items())
        table_bytes += 4 + name.size() + 4 + 2 * 8 + 8;
    std::uint64_t offset = 4 + 4 + 8 + table_bytes;

    os.write(kCheckpointMagic, 4);
    detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
    detail::write_pod<std::uint64_t>(os, store.items().size());
    for (const auto& [name, m] : store.items()) {
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(os, 2);
        detail::write_pod<std::uint64_t>(os, m.rows());
        detail::write_pod<std::uint64_t>(os, m.cols());
        detail::write_pod<std::uint64_t>(os, offset);
        offset += m.size() * sizeof(double);
    }
    for (const auto& [name, m] : store.items())
        os.write(reinterpret_cast<const char*>(m.data().data()),
                 static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!os) throw CorruptCheckpoint("write failed for " + path);
}

inline ParamStore load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CorruptCheckpoint("cannot open " + path);
    is.seekg(0, std::ios::end);
    const std::uint64_t file_size = static_cast<std::uint64_t>(is.tellg());
    is.seekg(0);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw CorruptCheckpoint("bad magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));
    const auto count = detail::read_pod<std::uint64_t>(is);
    if (count > (1u << 20)) throw CorruptCheckpoint("implausible tensor count");

    struct Entry {
        std::string name;
        std::uint64_t rows, cols, offset;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is);
        if (name_len > 4096) throw CorruptCheckpoint("implausible tensor name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw CorruptCheckpoint("truncated tensor table");
        const auto rank = detail::read_pod<std::uint32_t>(is);
        if (rank != 2) throw CorruptCheckpoint("unsupported tensor rank");
        const auto rows = detail::read_pod<std::uint64_t>(is);
        const auto cols = detail::read_pod<std::uint64_t>(is);
        const auto offset = detail::read_pod<std::uint64_t>(is);
        if (rows * cols > (1ull << 32)) throw CorruptCheckpoint("implausible tensor size");
        if (offset + rows * cols * sizeof(double) > file_size)
            throw CorruptCheckpoint("tensor data extends past end of file");
        entries.push_back({std::move(name), rows, cols, offset});
    }

    ParamStore store;
    for (const auto& e : entries) {
        Matrix m(e.rows, e.cols);
        is.seekg(static_cast<std::streamoff>(e.offset));
        is.read(reinterpret_cast<char*>(m.data().data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!is) throw CorruptCheckpoint("truncated tensor data for " + e.name);
        store.set(e.name, std::move(m));
    }
    return store;
}

/// Presence check for a component's expected tensor set.
inline void require_tensors(const ParamStore& store, const std::vector<std::string>& names) {
    for (const auto& n : names)
        if (!store.has(n)) throw IncompleteCheckpoint("missing tensor " + n);
}

}  // namespace omoe
