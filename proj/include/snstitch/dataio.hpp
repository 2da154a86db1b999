#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "snstitch/errors.hpp"
#include "snstitch/matrix.hpp"
#include "snstitch/rng.hpp"

namespace snstitch {

struct Sample {
  Matrix tokens;  // seq_len x patch_dim
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const { return samples.size(); }
  std::size_t seq_len() const { return samples.empty() ? 0 : samples.front().tokens.rows(); }
  std::size_t patch_dim() const { return samples.empty() ? 0 : samples.front().tokens.cols(); }
};

// Stacks the selected samples into a (count * seq_len) x patch_dim matrix.
struct Batch {
  Matrix tokens;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("make_batch: empty index list");
  const std::size_t n = ds.seq_len(), p = ds.patch_dim();
  Batch b;
  b.tokens = Matrix(indices.size() * n, p);
  b.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = ds.samples.at(indices[k]);
    std::memcpy(b.tokens.row(k * n), s.tokens.data(), n * p * sizeof(double));
    b.labels.push_back(s.label);
  }
  return b;
}

inline std::vector<std::size_t> sample_indices(Rng& rng, std::size_t dataset_size,
                                               std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = rng.below(dataset_size);
  return idx;
}

// ---------------------------------------------------------------------------
// synthetic classification task
// ---------------------------------------------------------------------------

// Class-conditional Gaussian token clouds around orthogonal prototypes.
// Prototype norm is margin * noise_std, so margin measures separation in
// noise units.
struct SynthTaskSpec {
  std::size_t num_classes = 10;
  std::size_t train_per_class = 100;
  std::size_t val_per_class = 25;
  std::size_t seq_len = 8;
  std::size_t patch_dim = 16;
  double noise_std = 1.0;
  double margin = 3.0;
  std::uint64_t prototype_seed = 1;

  void validate() const {
    if (num_classes == 0 || train_per_class == 0 || seq_len == 0 || patch_dim == 0)
      throw ShapeError("SynthTaskSpec: counts must be positive");
    if (patch_dim < num_classes)
      throw ShapeError("SynthTaskSpec: patch_dim must be >= num_classes for "
                       "orthogonal prototypes");
    if (margin <= 0.0) throw NumericalError("SynthTaskSpec: margin must be positive");
    if (noise_std < 0.0) throw NumericalError("SynthTaskSpec: negative noise std");
  }
};

struct SynthTask {
  Dataset train, val;
  Matrix prototypes;  // num_classes x patch_dim
};

inline SynthTask make_synthetic(const SynthTaskSpec& spec, Rng& rng) {
  spec.validate();
  // Orthonormal prototypes from the dedicated prototype seed, scaled to the
  // margin. Gram-Schmidt on Gaussian rows.
  Rng proto_rng(spec.prototype_seed);
  Matrix proto = gaussian(proto_rng, spec.num_classes, spec.patch_dim, 1.0);
  for (std::size_t i = 0; i < spec.num_classes; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < spec.patch_dim; ++k) dot += proto(i, k) * proto(j, k);
      for (std::size_t k = 0; k < spec.patch_dim; ++k) proto(i, k) -= dot * proto(j, k);
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < spec.patch_dim; ++k) norm += proto(i, k) * proto(i, k);
    norm = std::sqrt(norm);
    if (norm < 1e-9)
      throw NumericalError("make_synthetic: degenerate prototype draw");
    for (std::size_t k = 0; k < spec.patch_dim; ++k) proto(i, k) /= norm;
  }
  const double scale = spec.margin * (spec.noise_std > 0.0 ? spec.noise_std : 1.0);
  proto *= scale;

  auto fill = [&](Dataset& ds, std::size_t per_class, const char* tag) {
    ds.num_classes = spec.num_classes;
    ds.split = tag;
    ds.samples.reserve(per_class * spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      for (std::size_t s = 0; s < per_class; ++s) {
        Sample sample;
        sample.label = c;
        sample.tokens = Matrix(spec.seq_len, spec.patch_dim);
        for (std::size_t i = 0; i < spec.seq_len; ++i) {
          double* r = sample.tokens.row(i);
          for (std::size_t k = 0; k < spec.patch_dim; ++k) {
            r[k] = proto(c, k);
            if (spec.noise_std > 0.0) r[k] += spec.noise_std * rng.gaussian();
          }
        }
        ds.samples.push_back(std::move(sample));
      }
    }
  };

  SynthTask task;
  fill(task.train, spec.train_per_class, "train");
  fill(task.val, spec.val_per_class, "val");
  task.prototypes = std::move(proto);
  return task;
}

// ---------------------------------------------------------------------------
// IDX ingestion (big-endian; gzip accepted transparently by magic sniffing)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("idx: cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline std::string gunzip_bytes(const std::string& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw FormatError("idx: gzip init failed");
  std::string out;
  std::vector<unsigned char> buf(1 << 16);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  int ret = Z_OK;
  do {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("idx: gzip stream corrupt (zlib code " + std::to_string(ret) + ")");
    }
    out.append(reinterpret_cast<char*>(buf.data()), buf.size() - zs.avail_out);
  } while (ret != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

inline std::string gzip_bytes(const std::string& in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK)
    throw FormatError("gzip: deflate init failed");
  std::string out;
  std::vector<unsigned char> buf(1 << 16);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  int ret = Z_OK;
  do {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    ret = deflate(&zs, Z_FINISH);
    out.append(reinterpret_cast<char*>(buf.data()), buf.size() - zs.avail_out);
  } while (ret != Z_STREAM_END);
  deflateEnd(&zs);
  return out;
}

inline std::string load_maybe_gzip(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
      static_cast<unsigned char>(bytes[1]) == 0x8b)
    return gunzip_bytes(bytes);
  return bytes;
}

inline std::uint32_t read_u32_be(const std::string& bytes, std::size_t off,
                                 const char* what) {
  if (off + 4 > bytes.size())
    throw FormatError(std::string("idx: truncated while reading ") + what +
                      " at byte " + std::to_string(off));
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3]));
}

inline void write_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Splits an H x W image into non-overlapping patch x patch tokens, row-major
// over patches then over pixels inside a patch. Ragged edges are zero-padded.
inline Matrix patchify(const Matrix& image, std::size_t patch) {
  if (patch == 0) throw ShapeError("patchify: patch must be positive");
  const std::size_t ph = (image.rows() + patch - 1) / patch;
  const std::size_t pw = (image.cols() + patch - 1) / patch;
  Matrix tokens(ph * pw, patch * patch);
  for (std::size_t bi = 0; bi < ph; ++bi) {
    for (std::size_t bj = 0; bj < pw; ++bj) {
      double* t = tokens.row(bi * pw + bj);
      for (std::size_t i = 0; i < patch; ++i) {
        for (std::size_t j = 0; j < patch; ++j) {
          const std::size_t r = bi * patch + i, c = bj * patch + j;
          t[i * patch + j] = (r < image.rows() && c < image.cols()) ? image(r, c) : 0.0;
        }
      }
    }
  }
  return tokens;
}

inline Matrix unpatchify(const Matrix& tokens, std::size_t height, std::size_t width,
                         std::size_t patch) {
  const std::size_t ph = (height + patch - 1) / patch;
  const std::size_t pw = (width + patch - 1) / patch;
  if (tokens.rows() != ph * pw || tokens.cols() != patch * patch)
    throw ShapeError("unpatchify: token shape " + shape_str(tokens) +
                     " does not match image geometry");
  Matrix image(height, width);
  for (std::size_t bi = 0; bi < ph; ++bi)
    for (std::size_t bj = 0; bj < pw; ++bj) {
      const double* t = tokens.row(bi * pw + bj);
      for (std::size_t i = 0; i < patch; ++i)
        for (std::size_t j = 0; j < patch; ++j) {
          const std::size_t r = bi * patch + i, c = bj * patch + j;
          if (r < height && c < width) image(r, c) = t[i * patch + j];
        }
    }
  return image;
}

struct IdxGeometry {
  std::size_t count = 0, height = 0, width = 0;
};

// Parses an IDX image/label pair into a token dataset. Pixels are scaled to
// [0, 1]; images are patchified into patch*patch tokens.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t patch = 4, IdxGeometry* geometry = nullptr) {
  const std::string img = detail::load_maybe_gzip(images_path);
  const std::string lab = detail::load_maybe_gzip(labels_path);

  const std::uint32_t img_magic = detail::read_u32_be(img, 0, "images magic");
  if (img_magic != kIdxImagesMagic)
    throw FormatError("idx: bad images magic 0x" + std::to_string(img_magic) +
                      " at byte 0 in " + images_path);
  const std::uint32_t count = detail::read_u32_be(img, 4, "image count");
  const std::uint32_t height = detail::read_u32_be(img, 8, "image height");
  const std::uint32_t width = detail::read_u32_be(img, 12, "image width");
  const std::size_t pixels = static_cast<std::size_t>(count) * height * width;
  if (16 + pixels > img.size())
    throw FormatError("idx: truncated image payload at byte " +
                      std::to_string(img.size()) + ", need " +
                      std::to_string(16 + pixels));

  const std::uint32_t lab_magic = detail::read_u32_be(lab, 0, "labels magic");
  if (lab_magic != kIdxLabelsMagic)
    throw FormatError("idx: bad labels magic 0x" + std::to_string(lab_magic) +
                      " at byte 0 in " + labels_path);
  const std::uint32_t lab_count = detail::read_u32_be(lab, 4, "label count");
  if (lab_count != count)
    throw FormatError("idx: image/label count mismatch: " + std::to_string(count) +
                      " vs " + std::to_string(lab_count));
  if (8 + static_cast<std::size_t>(lab_count) > lab.size())
    throw FormatError("idx: truncated label payload at byte " + std::to_string(lab.size()));

  Dataset ds;
  ds.samples.reserve(count);
  std::size_t max_label = 0;
  for (std::uint32_t s = 0; s < count; ++s) {
    Matrix image(height, width);
    const std::size_t base = 16 + static_cast<std::size_t>(s) * height * width;
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j)
        image(i, j) =
            static_cast<double>(static_cast<unsigned char>(img[base + i * width + j])) /
            255.0;
    Sample sample;
    sample.tokens = patchify(image, patch);
    sample.label = static_cast<unsigned char>(lab[8 + s]);
    max_label = std::max(max_label, sample.label);
    ds.samples.push_back(std::move(sample));
  }
  ds.num_classes = max_label + 1;
  if (geometry) *geometry = {count, height, width};
  return ds;
}

// Writes the dataset back to the IDX pair; tokens are reassembled into images
// and quantized to u8. Round-trips byte-exactly with load_idx output.
inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path, std::size_t height,
                     std::size_t width, std::size_t patch = 4) {
  std::string img, lab;
  detail::write_u32_be(img, kIdxImagesMagic);
  detail::write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
  detail::write_u32_be(img, static_cast<std::uint32_t>(height));
  detail::write_u32_be(img, static_cast<std::uint32_t>(width));
  detail::write_u32_be(lab, kIdxLabelsMagic);
  detail::write_u32_be(lab, static_cast<std::uint32_t>(ds.size()));
  for (const Sample& s : ds.samples) {
    Matrix image = unpatchify(s.tokens, height, width, patch);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double v = std::clamp(image(i, j), 0.0, 1.0);
        img.push_back(static_cast<char>(static_cast<unsigned char>(
            std::lround(v * 255.0))));
      }
    lab.push_back(static_cast<char>(static_cast<unsigned char>(s.label)));
  }
  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  fi.write(img.data(), static_cast<std::streamsize>(img.size()));
  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  fl.write(lab.data(), static_cast<std::streamsize>(lab.size()));
  if (!fi || !fl) throw FormatError("idx: write failed");
}

}  // namespace snstitch
