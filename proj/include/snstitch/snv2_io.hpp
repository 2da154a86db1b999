#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "snstitch/anchor.hpp"
#include "snstitch/errors.hpp"
#include "snstitch/matrix.hpp"

namespace snstitch {

// SNV2 container: magic "SNV2", u16 version, u16 tensor count; per tensor a
// u8 name length, the UTF-8 name, u8 rank, rank u32 dims, then the f64
// payload. All integers and doubles little-endian.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

namespace detail {

constexpr char kSnv2Magic[4] = {'S', 'N', 'V', '2'};
constexpr std::uint16_t kSnv2Version = 1;

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
  const unsigned char* p;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > size)
      throw FormatError(std::string("snv2: truncated while reading ") + what +
                        " at byte " + std::to_string(pos));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return p[pos++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(p[pos]) |
                      static_cast<std::uint16_t>(p[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

}  // namespace detail

inline void write_snv2_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() > 0xffff) throw FormatError("snv2: too many tensors");
  std::string out;
  out.append(detail::kSnv2Magic, 4);
  detail::put_u16(out, detail::kSnv2Version);
  detail::put_u16(out, static_cast<std::uint16_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xff) throw FormatError("snv2: tensor name too long: " + t.name);
    std::size_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.data.size()) throw FormatError("snv2: dims/payload mismatch for " + t.name);
    out.push_back(static_cast<char>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(out, d);
    for (double v : t.data) detail::put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("snv2: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("snv2: write failed: " + path);
}

inline std::vector<NamedTensor> read_snv2_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("snv2: cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};

  r.need(4, "magic");
  if (std::memcmp(bytes.data(), detail::kSnv2Magic, 4) != 0)
    throw FormatError("snv2: bad magic in " + path);
  r.pos = 4;
  const std::uint16_t version = r.u16("version");
  if (version != detail::kSnv2Version)
    throw FormatError("snv2: unsupported version " + std::to_string(version));
  const std::uint16_t count = r.u16("tensor count");

  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint8_t name_len = r.u8("name length");
    r.need(name_len, "name");
    t.name.assign(bytes.data() + r.pos, name_len);
    r.pos += name_len;
    const std::uint8_t rank = r.u8("rank");
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32("dim"));
      n *= t.dims.back();
    }
    t.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.data[k] = r.f64("payload");
    tensors.push_back(std::move(t));
  }
  if (r.pos != bytes.size())
    throw FormatError("snv2: trailing bytes after tensor table at byte " +
                      std::to_string(r.pos));
  return tensors;
}

inline NamedTensor to_tensor(const std::string& name, const Matrix& m) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

inline Matrix to_matrix(const NamedTensor& t) {
  if (t.dims.size() != 2)
    throw FormatError("snv2: tensor " + t.name + " is not rank 2");
  Matrix m(t.dims[0], t.dims[1]);
  std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(double));
  return m;
}

inline void save_checkpoint(const AnchorModel& model, const std::string& path) {
  std::vector<NamedTensor> tensors;
  for_each_param(model, [&](const std::string& name, const Matrix& m) {
    tensors.push_back(to_tensor(name, m));
  });
  write_snv2_file(path, tensors);
}

// Loads a checkpoint written by save_checkpoint. The caller's AnchorSpec
// fixes the expected shape table; any mismatch is a format error and nothing
// is returned.
inline AnchorModel load_checkpoint(const std::string& path, const AnchorSpec& spec) {
  std::vector<NamedTensor> tensors = read_snv2_file(path);
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  if (by_name.size() != tensors.size())
    throw FormatError("snv2: duplicate tensor names in " + path);

  AnchorModel model = AnchorModel::zeros(spec);
  std::size_t used = 0;
  for_each_param(model, [&](const std::string& name, Matrix& m) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("snv2: missing tensor " + name);
    Matrix loaded = to_matrix(*it->second);
    if (!loaded.same_shape(m))
      throw FormatError("snv2: shape mismatch for " + name + ": got " +
                        shape_str(loaded) + ", want " + shape_str(m));
    m = std::move(loaded);
    ++used;
  });
  if (used != tensors.size())
    throw FormatError("snv2: unexpected extra tensors in " + path);
  return model;
}

}  // namespace snstitch
