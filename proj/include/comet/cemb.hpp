#pragma once

// CEMB: binary container for pooled feature matrices and ragged token sets.
//
//   magic "CEMB" | version u32 (=1) | kind u8 (0 pooled, 1 ragged) | d u32 | n u64
//   ragged only: grid flag u8 | H u32 | W u32 | token counts u32[n]
//   sample ids: n x (u32 byte length | UTF-8 bytes)
//   label flag u8 | labels u32[n] if flag
//   payload: float32 row-major (all tokens of sample 0, then sample 1, ...)
//
// All integers and floats are little-endian. Values are held as double in
// memory, so a read/write cycle is bit-identical for data that came from a
// CEMB file; writing arbitrary doubles rounds them to float32.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "comet/errors.hpp"
#include "comet/types.hpp"

namespace comet {

static_assert(std::endian::native == std::endian::little, "CEMB I/O assumes a little-endian host");

namespace cemb_detail {

inline constexpr char kMagic[4] = {'C', 'E', 'M', 'B'};
inline constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_ + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto len = get<std::uint32_t>();
        need(len);
        std::string s(data_ + pos_, len);
        pos_ += len;
        return s;
    }
    void need(std::size_t n) const {
        if (size_ - pos_ < n) throw FormatError("truncated CEMB payload");
    }
    bool at_end() const { return pos_ == size_; }
    std::size_t remaining() const { return size_ - pos_; }

private:
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline void write_ids_and_labels(Writer& w, const std::vector<std::string>& ids,
                                 const std::optional<Labels>& labels) {
    for (const auto& id : ids) w.put_string(id);
    w.put(static_cast<std::uint8_t>(labels ? 1 : 0));
    if (labels)
        for (int y : *labels) w.put(static_cast<std::uint32_t>(y));
}

inline void put_row(Writer& w, const Matrix& m, Eigen::Index r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.put(static_cast<float>(m(r, c)));
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + path.string());
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline double read_value(Reader& r) {
    const auto f = r.get<float>();
    if (!std::isfinite(f)) throw DataError("CEMB payload contains NaN or Inf");
    return static_cast<double>(f);
}

}  // namespace cemb_detail

inline std::vector<char> encode_cemb(const FeatureMatrix& m) {
    cemb_detail::Writer w;
    w.put_bytes(cemb_detail::kMagic, 4);
    w.put(cemb_detail::kVersion);
    w.put(std::uint8_t{0});
    w.put(static_cast<std::uint32_t>(m.d()));
    w.put(static_cast<std::uint64_t>(m.n()));
    cemb_detail::write_ids_and_labels(w, m.sample_ids, m.labels);
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) cemb_detail::put_row(w, m.values, r);
    return w.bytes();
}

inline std::vector<char> encode_cemb(const TokenEmbeddingSet& s) {
    cemb_detail::Writer w;
    w.put_bytes(cemb_detail::kMagic, 4);
    w.put(cemb_detail::kVersion);
    w.put(std::uint8_t{1});
    w.put(static_cast<std::uint32_t>(s.d));
    w.put(static_cast<std::uint64_t>(s.n()));
    w.put(static_cast<std::uint8_t>(s.grid ? 1 : 0));
    w.put(static_cast<std::uint32_t>(s.grid ? s.grid->height : 0));
    w.put(static_cast<std::uint32_t>(s.grid ? s.grid->width : 0));
    for (const auto& t : s.tokens) w.put(static_cast<std::uint32_t>(t.rows()));
    cemb_detail::write_ids_and_labels(w, s.sample_ids, s.labels);
    for (const auto& t : s.tokens)
        for (Eigen::Index r = 0; r < t.rows(); ++r) cemb_detail::put_row(w, t, r);
    return w.bytes();
}

inline void write_embeddings(const std::filesystem::path& path, const FeatureMatrix& m) {
    cemb_detail::write_file(path, encode_cemb(m));
}

inline void write_embeddings(const std::filesystem::path& path, const TokenEmbeddingSet& s) {
    cemb_detail::write_file(path, encode_cemb(s));
}

using EmbeddingFile = std::variant<FeatureMatrix, TokenEmbeddingSet>;

inline EmbeddingFile decode_cemb(const char* data, std::size_t size) {
    cemb_detail::Reader r(data, size);
    r.need(4);
    if (std::memcmp(data, cemb_detail::kMagic, 4) != 0) throw FormatError("bad magic, not a CEMB file");
    for (int i = 0; i < 4; ++i) r.get<char>();
    const auto version = r.get<std::uint32_t>();
    if (version != cemb_detail::kVersion) throw FormatError("unsupported CEMB version " + std::to_string(version));
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1) throw FormatError("unknown CEMB kind " + std::to_string(kind));
    const auto d = r.get<std::uint32_t>();
    const auto n64 = r.get<std::uint64_t>();
    if (n64 == 0) throw DataError("CEMB file holds no samples");
    if (d == 0) throw FormatError("CEMB feature dimension is zero");
    // Cheap bound before allocating: every sample needs at least its id length prefix.
    if (n64 > r.remaining() / 4) throw FormatError("truncated CEMB payload");
    const auto n = static_cast<std::size_t>(n64);

    std::optional<Grid> grid;
    std::vector<std::uint32_t> counts;
    if (kind == 1) {
        const auto grid_flag = r.get<std::uint8_t>();
        const auto h = r.get<std::uint32_t>();
        const auto w = r.get<std::uint32_t>();
        if (grid_flag > 1) throw FormatError("bad grid flag");
        if (grid_flag == 1) grid = Grid{h, w};
        counts.resize(n);
        for (auto& c : counts) {
            c = r.get<std::uint32_t>();
            if (grid && c != grid->size())
                throw FormatError("token count " + std::to_string(c) + " does not match grid " +
                                  std::to_string(h) + "x" + std::to_string(w));
        }
    }

    std::vector<std::string> ids(n);
    for (auto& id : ids) id = r.get_string();
    std::optional<Labels> labels;
    const auto label_flag = r.get<std::uint8_t>();
    if (label_flag > 1) throw FormatError("bad label flag");
    if (label_flag == 1) {
        labels.emplace(n);
        for (auto& y : *labels) {
            const auto v = r.get<std::uint32_t>();
            if (v > static_cast<std::uint32_t>(INT32_MAX)) throw FormatError("label out of range");
            y = static_cast<int>(v);
        }
    }

    if (kind == 0) {
        r.need(n * d * sizeof(float));
        FeatureMatrix m;
        m.values.resize(static_cast<Eigen::Index>(n), d);
        for (Eigen::Index i = 0; i < m.values.rows(); ++i)
            for (Eigen::Index j = 0; j < m.values.cols(); ++j) m.values(i, j) = cemb_detail::read_value(r);
        if (!r.at_end()) throw FormatError("trailing bytes after CEMB payload");
        m.sample_ids = std::move(ids);
        m.labels = std::move(labels);
        m.num_classes = m.labels ? count_classes(*m.labels) : 0;
        return m;
    }

    TokenEmbeddingSet s;
    s.d = d;
    s.grid = grid;
    std::size_t total = 0;
    for (auto c : counts) {
        if (c == 0) throw DataError("sample with zero tokens");
        total += c;
    }
    r.need(total * d * sizeof(float));
    s.tokens.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix t(counts[i], d);
        for (Eigen::Index p = 0; p < t.rows(); ++p)
            for (Eigen::Index j = 0; j < t.cols(); ++j) t(p, j) = cemb_detail::read_value(r);
        s.tokens.push_back(std::move(t));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after CEMB payload");
    s.sample_ids = std::move(ids);
    s.labels = std::move(labels);
    s.num_classes = s.labels ? count_classes(*s.labels) : 0;
    return s;
}

inline EmbeddingFile read_embeddings(const std::filesystem::path& path) {
    const auto bytes = cemb_detail::read_file(path);
    return decode_cemb(bytes.data(), bytes.size());
}

}  // namespace comet
