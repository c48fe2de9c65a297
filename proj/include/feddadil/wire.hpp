#pragma once

// Little-endian binary formats for dictionaries ("FDDL") and classifier
// checkpoints ("FDCL"). All scalars are IEEE-754 binary32.
//
// FDDL: magic[4] version:u16 K:u16 n:u32 d:u32 n_c:u32, then for each atom
//       n*d feature scalars followed by n*n_c label scalars, row-major.
// FDCL: magic[4] version:u16 count:u16 n_c:u32 d:u32 reserved:u32, then for
//       each classifier n_c*d weight scalars followed by n_c bias scalars.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "feddadil/classifier.hpp"
#include "feddadil/dictionary.hpp"

namespace feddadil::wire {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::array<char, 4> kDictionaryMagic{'F', 'D', 'D', 'L'};
inline constexpr std::array<char, 4> kClassifierMagic{'F', 'D', 'C', 'L'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 20;
inline constexpr std::size_t kScalarBytes = 4;

class FormatError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

inline void put_f32(Bytes& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

template <typename M>
void put_block(Bytes& out, const M& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f32(out, m(i, j));
  }
}

class Reader {
 public:
  explicit Reader(const Bytes& bytes) : bytes_(bytes) {}

  void expect_magic(const std::array<char, 4>& magic) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, magic.data(), 4) != 0) {
      throw FormatError("bad magic, expected " + std::string(magic.data(), 4));
    }
    pos_ += 4;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int s = 0; s < 4; ++s) v |= static_cast<std::uint32_t>(bytes_[pos_ + s]) << (8 * s);
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  Matrix block(std::size_t rows, std::size_t cols) {
    need(rows * cols * kScalarBytes);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f32();
    }
    return m;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes after payload");
  }

 private:
  void need(std::size_t count) const {
    if (bytes_.size() - pos_ < count) throw FormatError("truncated payload");
  }
  const Bytes& bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError(std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

/// Number of bytes spent on scalars in a dictionary payload.
inline std::size_t dictionary_scalar_bytes(const Dictionary& dict) {
  return dict.parameter_count() * kScalarBytes;
}

inline Bytes encode_dictionary(const Dictionary& dict) {
  if (dict.num_atoms() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError("too many atoms for the wire format");
  }
  Bytes out;
  out.reserve(kHeaderBytes + dictionary_scalar_bytes(dict));
  out.insert(out.end(), kDictionaryMagic.begin(), kDictionaryMagic.end());
  detail::put_u16(out, kVersion);
  detail::put_u16(out, static_cast<std::uint16_t>(dict.num_atoms()));
  detail::put_u32(out, detail::checked_u32(dict.support_size(), "n"));
  detail::put_u32(out, detail::checked_u32(dict.dim(), "d"));
  detail::put_u32(out, detail::checked_u32(dict.num_classes(), "n_c"));
  for (const auto& atom : dict.atoms()) {
    detail::put_block(out, atom.features());
    detail::put_block(out, atom.labels());
  }
  return out;
}

inline Dictionary decode_dictionary(const Bytes& bytes) {
  detail::Reader in(bytes);
  in.expect_magic(kDictionaryMagic);
  if (in.u16() != kVersion) throw FormatError("unsupported dictionary version");
  const std::size_t k = in.u16();
  const std::size_t n = in.u32();
  const std::size_t d = in.u32();
  const std::size_t nc = in.u32();
  if (k == 0 || n == 0 || d == 0 || nc == 0) throw FormatError("empty dictionary header");
  std::vector<LabeledMeasure> atoms;
  for (std::size_t a = 0; a < k; ++a) {
    Matrix f = in.block(n, d);
    Matrix l = in.block(n, nc);
    atoms.emplace_back(std::move(f), std::move(l), LabeledMeasure::Unchecked{});
  }
  in.expect_end();
  return Dictionary(std::move(atoms));
}

/// Rounds every scalar to binary32, i.e. what a receiver of the payload sees.
inline Dictionary quantize(const Dictionary& dict) { return decode_dictionary(encode_dictionary(dict)); }

inline Bytes encode_classifiers(const std::vector<LinearClassifier>& models) {
  if (models.empty() || models.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError("classifier checkpoint needs 1..65535 models");
  }
  const std::size_t nc = models[0].num_classes();
  const std::size_t d = models[0].dim();
  Bytes out;
  out.insert(out.end(), kClassifierMagic.begin(), kClassifierMagic.end());
  detail::put_u16(out, kVersion);
  detail::put_u16(out, static_cast<std::uint16_t>(models.size()));
  detail::put_u32(out, detail::checked_u32(nc, "n_c"));
  detail::put_u32(out, detail::checked_u32(d, "d"));
  detail::put_u32(out, 0);
  for (const auto& m : models) {
    if (m.num_classes() != nc || m.dim() != d) throw FormatError("classifier shapes differ");
    detail::put_block(out, m.weights);
    detail::put_block(out, m.bias.transpose());
  }
  return out;
}

inline std::vector<LinearClassifier> decode_classifiers(const Bytes& bytes) {
  detail::Reader in(bytes);
  in.expect_magic(kClassifierMagic);
  if (in.u16() != kVersion) throw FormatError("unsupported classifier version");
  const std::size_t count = in.u16();
  const std::size_t nc = in.u32();
  const std::size_t d = in.u32();
  in.u32();
  std::vector<LinearClassifier> models;
  for (std::size_t c = 0; c < count; ++c) {
    LinearClassifier m;
    m.weights = in.block(nc, d);
    m.bias = in.block(1, nc).row(0).transpose();
    models.push_back(std::move(m));
  }
  in.expect_end();
  return models;
}

inline void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// 64-bit FNV-1a digest, rendered as 16 hex digits.
inline std::string content_hash(const Bytes& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return s;
}

}  // namespace feddadil::wire
