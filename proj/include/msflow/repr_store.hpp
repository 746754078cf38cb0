#pragma once

// Multiscale representation store.
//
// File layout (all integers little-endian, doubles as IEEE-754 binary64 bit
// patterns in little-endian byte order):
//
//   header
//     8 bytes   magic "MSFREPR\0"
//     u32       format version (1)
//     u32       K, representation dimension
//     u32       S, scale count (1..32)
//     S times:  16 bytes scale name, NUL padded; u64 backcast length
//     u32       CRC-32 of every header byte before it
//   records, appended in write order
//     u32       record magic 0x31434552 ("REC1")
//     u32       series id length n
//     n bytes   series id
//     i64       anchor timestamp
//     u32       present mask, bit s set when scale s has a vector
//     S*K f64   vectors, scale-major; absent scales are written as zeros
//     u32       CRC-32 of the record bytes from the id length up to here
//
// The series index is rebuilt by scanning records on open; a later record
// with the same (series id, anchor) replaces an earlier one.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msflow/binary_io.hpp"
#include "msflow/dataset.hpp"
#include "msflow/encoder.hpp"
#include "msflow/error.hpp"

namespace msf {

struct ScaleSpec {
  std::string name;
  std::size_t length = 0;
  friend bool operator==(const ScaleSpec&, const ScaleSpec&) = default;
};

inline constexpr std::size_t kScaleNameBytes = 16;
inline constexpr std::size_t kMaxScales = 32;

// daily / weekly / monthly (30 days) / quarterly (90 days) in steps of `stride_seconds`.
inline std::vector<ScaleSpec> default_scales(std::int64_t stride_seconds) {
  if (stride_seconds <= 0 || 86400 % stride_seconds != 0)
    throw ConfigError("default scale table needs a stride dividing one day; got " + std::to_string(stride_seconds) +
                      " s; configure scales explicitly");
  const std::size_t day = static_cast<std::size_t>(86400 / stride_seconds);
  return {{"daily", day}, {"weekly", 7 * day}, {"monthly", 30 * day}, {"quarterly", 90 * day}};
}

inline void validate_scales(const std::vector<ScaleSpec>& scales) {
  if (scales.empty() || scales.size() > kMaxScales) throw ConfigError("scale table must have 1..32 entries");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i].name.empty() || scales[i].name.size() > kScaleNameBytes)
      throw ConfigError("scale name '" + scales[i].name + "' must have 1..16 characters");
    if (scales[i].length < kMinEncodeLength)
      throw ConfigError("scale '" + scales[i].name + "' length must be >= 4");
    if (i > 0 && scales[i].length <= scales[i - 1].length)
      throw ConfigError("scale lengths must be strictly increasing ('" + scales[i].name + "')");
    for (std::size_t j = 0; j < i; ++j)
      if (scales[j].name == scales[i].name) throw ConfigError("duplicate scale name '" + scales[i].name + "'");
  }
}

struct MultiscaleRepresentation {
  std::string series_id;
  std::int64_t anchor = 0;
  std::uint32_t present = 0;   // bit s: scale s covered
  Tensor vectors;              // S x K; absent rows are zero

  bool has(std::size_t s) const { return (present >> s) & 1u; }
  std::size_t present_count() const { return static_cast<std::size_t>(std::popcount(present)); }
  friend bool operator==(const MultiscaleRepresentation&, const MultiscaleRepresentation&) = default;
};

// Encodes the window of `length` rows ending at row `anchor_index` for each
// scale and keeps its final-row representation. With allow_partial, scales
// that do not fit in the history are flagged absent instead of failing.
inline MultiscaleRepresentation encode_multiscale(const Encoder& enc, const ParameterSet& ps, const TimeSeries& series,
                                                  std::size_t anchor_index, const std::vector<ScaleSpec>& scales,
                                                  bool allow_partial = false) {
  require(anchor_index < series.length(), "encode_multiscale: anchor index out of range");
  require(scales.size() <= kMaxScales, "encode_multiscale: too many scales");
  const std::size_t K = enc.config().repr_dim(), history = anchor_index + 1;
  MultiscaleRepresentation out{series.series_id, series.timestamps[anchor_index], 0, Tensor(Shape{scales.size(), K})};
  std::size_t longest = 0;
  for (const auto& s : scales) longest = std::max(longest, s.length);
  if (!allow_partial && history < longest) {
    const std::size_t first = longest - 1;
    const std::int64_t first_ts =
        first < series.length() ? series.timestamps[first] : series.timestamps[0] + static_cast<std::int64_t>(first) * series.stride();
    throw InsufficientHistory("series '" + series.series_id + "': anchor " + std::to_string(out.anchor) + " has " +
                                  std::to_string(history) + " points of history, longest scale needs " +
                                  std::to_string(longest) + "; first satisfiable anchor is " + std::to_string(first_ts),
                              first_ts);
  }
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const std::size_t len = scales[s].length;
    if (len > history || len < kMinEncodeLength) continue;
    const Tensor r = enc.summarize(ps, series.slice(history - len, len).values);
    std::copy(r.data().begin(), r.data().end(), out.vectors.data().begin() + static_cast<std::ptrdiff_t>(s * K));
    out.present |= 1u << s;
  }
  return out;
}

namespace detail {

inline constexpr char kStoreMagic[8] = {'M', 'S', 'F', 'R', 'E', 'P', 'R', '\0'};
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::uint32_t kRecordMagic = 0x31434552u;

}  // namespace detail

// Append-only store keyed by (series id, anchor timestamp). One writer per
// file; reads seek into the file and verify the record checksum.
class ReprStore {
 public:
  // Creates (or truncates) a store file.
  static ReprStore create(const std::string& path, std::size_t K, std::vector<ScaleSpec> scales) {
    validate_scales(scales);
    if (K == 0) throw SchemaError("representation dimension must be >= 1");
    detail::ByteWriter w;
    w.raw(detail::kStoreMagic, 8);
    w.u32(detail::kStoreVersion);
    w.u32(static_cast<std::uint32_t>(K));
    w.u32(static_cast<std::uint32_t>(scales.size()));
    for (const auto& s : scales) {
      char name[kScaleNameBytes] = {};
      std::memcpy(name, s.name.data(), s.name.size());
      w.raw(name, kScaleNameBytes);
      w.u64(s.length);
    }
    w.u32(detail::crc32_of(w.bytes.data(), w.bytes.size()));
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out) throw ArtifactError("cannot create representation store '" + path + "'");
      out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
      if (!out) throw ArtifactError("cannot write representation store '" + path + "'");
    }
    return open(path);
  }

  static ReprStore open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw ArtifactError("representation store '" + path + "' not found; run the `encode` command first");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ReprStore st;
    st.path_ = path;
    detail::ByteReader r(buf.data(), buf.size());
    try {
      if (r.str(8) != std::string(detail::kStoreMagic, 8)) throw SchemaError("'" + path + "' is not a representation store");
      const std::uint32_t version = r.u32();
      if (version != detail::kStoreVersion)
        throw SchemaError("representation store version " + std::to_string(version) + " unsupported (expected 1)");
      st.K_ = r.u32();
      const std::uint32_t S = r.u32();
      if (S == 0 || S > kMaxScales) throw IntegrityError("bad scale count in store header");
      for (std::uint32_t s = 0; s < S; ++s) {
        std::string name = r.str(kScaleNameBytes);
        name.resize(std::strlen(name.c_str()));
        st.scales_.push_back({name, static_cast<std::size_t>(r.u64())});
      }
      const std::size_t header_end = r.pos();
      if (r.u32() != detail::crc32_of(buf.data(), header_end)) throw IntegrityError("store header checksum mismatch");
      while (r.pos() < buf.size()) {
        const std::size_t offset = r.pos();
        if (r.u32() != detail::kRecordMagic) throw IntegrityError("bad record marker at byte " + std::to_string(offset));
        const std::uint32_t n = r.u32();
        std::string id = r.str(n);
        const std::int64_t anchor = r.i64();
        r.u32();
        r.skip(st.payload_bytes() + 4);
        st.index_[id][anchor] = offset;
        ++st.record_count_;
      }
    } catch (const IntegrityError& e) {
      throw IntegrityError("representation store '" + path + "': " + e.what());
    }
    return st;
  }

  std::size_t dim() const { return K_; }
  const std::vector<ScaleSpec>& scales() const { return scales_; }
  std::size_t record_count() const { return record_count_; }
  const std::string& path() const { return path_; }

  void put(const MultiscaleRepresentation& rep) {
    if (rep.vectors.rows() != scales_.size() || rep.vectors.cols() != K_)
      throw SchemaError("put: representation is " + shape_str(rep.vectors.shape()) + ", store expects " +
                        std::to_string(scales_.size()) + "x" + std::to_string(K_));
    if (rep.series_id.size() > UINT32_MAX) throw SchemaError("put: series id too long");
    detail::ByteWriter w;
    w.u32(detail::kRecordMagic);
    w.u32(static_cast<std::uint32_t>(rep.series_id.size()));
    w.raw(rep.series_id.data(), rep.series_id.size());
    w.i64(rep.anchor);
    w.u32(rep.present);
    for (double v : rep.vectors.data()) w.f64(v);
    w.u32(detail::crc32_of(w.bytes.data() + 4, w.bytes.size() - 4));
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    const auto offset = static_cast<std::size_t>(std::filesystem::file_size(path_));
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    out.flush();
    if (!out) throw ArtifactError("put: cannot append to '" + path_ + "'");
    index_[rep.series_id][rep.anchor] = offset;
    ++record_count_;
  }

  // Exact-key lookup; nullopt on miss.
  std::optional<MultiscaleRepresentation> get(const std::string& series_id, std::int64_t anchor) const {
    auto it = index_.find(series_id);
    if (it == index_.end()) return std::nullopt;
    auto jt = it->second.find(anchor);
    if (jt == it->second.end()) return std::nullopt;
    return read_record(jt->second, series_id.size());
  }

  // Greatest stored anchor <= t for the series.
  std::optional<std::int64_t> nearest_anchor(const std::string& series_id, std::int64_t t) const {
    auto it = index_.find(series_id);
    if (it == index_.end()) return std::nullopt;
    auto jt = it->second.upper_bound(t);
    if (jt == it->second.begin()) return std::nullopt;
    return std::prev(jt)->first;
  }

  std::vector<std::int64_t> anchors(const std::string& series_id) const {
    std::vector<std::int64_t> out;
    if (auto it = index_.find(series_id); it != index_.end())
      for (const auto& [a, _] : it->second) out.push_back(a);
    return out;
  }

 private:
  ReprStore() = default;

  std::size_t payload_bytes() const { return scales_.size() * K_ * 8; }
  std::size_t record_bytes(std::size_t id_len) const { return 4 + 4 + id_len + 8 + 4 + payload_bytes() + 4; }

  MultiscaleRepresentation read_record(std::size_t offset, std::size_t id_len) const {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw ArtifactError("representation store '" + path_ + "' disappeared");
    std::vector<unsigned char> buf(record_bytes(id_len));
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw IntegrityError("record at byte " + std::to_string(offset) + " is truncated");
    detail::ByteReader r(buf.data(), buf.size());
    const std::uint32_t stored_crc = [&] {
      detail::ByteReader t(buf.data() + buf.size() - 4, 4);
      return t.u32();
    }();
    if (stored_crc != detail::crc32_of(buf.data() + 4, buf.size() - 8))
      throw IntegrityError("record at byte " + std::to_string(offset) + " of '" + path_ + "' failed its checksum");
    r.u32();
    MultiscaleRepresentation rep;
    rep.series_id = r.str(r.u32());
    rep.anchor = r.i64();
    rep.present = r.u32();
    rep.vectors = Tensor(Shape{scales_.size(), K_});
    for (auto& v : rep.vectors.data()) v = r.f64();
    return rep;
  }

  std::string path_;
  std::size_t K_ = 0;
  std::vector<ScaleSpec> scales_;
  std::size_t record_count_ = 0;
  std::map<std::string, std::map<std::int64_t, std::size_t>> index_;
};

// Anchor rows at a fixed cadence: rows every-1, 2*every-1, ... (the last
// step of each period), from the first row with `min_history` rows of history.
inline std::vector<std::size_t> anchor_rows(std::size_t T, std::size_t every, std::size_t min_history) {
  require(every >= 1, "anchor_rows: cadence must be >= 1");
  std::vector<std::size_t> out;
  for (std::size_t r = every - 1; r < T; r += every)
    if (r + 1 >= min_history) out.push_back(r);
  return out;
}

}  // namespace msf
