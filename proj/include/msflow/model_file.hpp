#pragma once

// Parameter files hold a ParameterSet together with the configuration that
// produced it. Both the pretrained encoder and the trained model use it.
//
// Layout, little-endian:
//   magic "MSFPARAM" (8 bytes) | version u32
//   kind length u32 | kind bytes              ("encoder" or "model")
//   config length u64 | config JSON bytes
//   tensor count u32, then per tensor in path order:
//     path length u32 | path bytes | requires_grad u32 | rank u32 | rank x u64 extents | values f64
//   CRC-32 u32 over every preceding byte

#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "msflow/autodiff.hpp"
#include "msflow/binary_io.hpp"

namespace msf {

inline constexpr char kParamMagic[8] = {'M', 'S', 'F', 'P', 'A', 'R', 'A', 'M'};
inline constexpr std::uint32_t kParamVersion = 1;

struct ParameterFile {
  std::string kind;
  std::string config_json;
  ParameterSet params;
};

inline void save_parameter_file(const std::string& path, const std::string& kind, const std::string& config_json,
                                const ParameterSet& ps) {
  detail::ByteWriter w;
  w.raw(kParamMagic, 8);
  w.u32(kParamVersion);
  w.u32(static_cast<std::uint32_t>(kind.size()));
  w.raw(kind.data(), kind.size());
  w.u64(config_json.size());
  w.raw(config_json.data(), config_json.size());
  w.u32(static_cast<std::uint32_t>(ps.entries().size()));
  for (const auto& [name, e] : ps.entries()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(e.requires_grad ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(e.value.shape().size()));
    for (std::size_t d : e.value.shape()) w.u64(d);
    for (double v : e.value.data()) w.f64(v);
  }
  w.u32(detail::crc32_of(w.bytes.data(), w.bytes.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot create " + kind + " file '" + path + "'");
  out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw ArtifactError("cannot write " + kind + " file '" + path + "'");
}

// `hint` names the command that produces the file, for the not-found message.
inline ParameterFile load_parameter_file(const std::string& path, const std::string& expected_kind, const std::string& hint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(expected_kind + " file '" + path + "' not found; run the `" + hint + "` command first");
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), kParamMagic, 8) != 0)
    throw IntegrityError("'" + path + "' is not a parameter file");
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)]) << (8 * i);
  if (detail::crc32_of(buf.data(), buf.size() - 4) != stored) throw IntegrityError("checksum mismatch in '" + path + "'");
  detail::ByteReader r(buf.data(), buf.size() - 4);
  r.skip(8);
  if (const auto v = r.u32(); v != kParamVersion)
    throw SchemaError("'" + path + "' has format version " + std::to_string(v) + ", expected " + std::to_string(kParamVersion));
  ParameterFile f;
  f.kind = r.str(r.u32());
  if (f.kind != expected_kind)
    throw SchemaError("'" + path + "' holds a " + f.kind + ", expected a " + expected_kind);
  f.config_json = r.str(static_cast<std::size_t>(r.u64()));
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str(r.u32());
    const bool grad = r.u32() != 0;
    Shape shape(r.u32());
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    Tensor t(shape);
    for (auto& v : t.data()) v = r.f64();
    f.params.add(name, std::move(t), grad);
  }
  if (r.has(1)) throw IntegrityError("trailing bytes in '" + path + "'");
  return f;
}

}  // namespace msf
