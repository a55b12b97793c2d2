/**
 * @file nifti.hpp
 * @brief Minimal NIfTI-1 single-file (.nii) reader and writer.
 *
 * Supported: uncompressed little-endian files, dim[0] == 3, datatypes
 * uint8, int16, uint16 and float32. Volumes are written as float32 and label
 * maps as uint16 with intent NIFTI_INTENT_LABEL and the class count in
 * intent_p1. The sform rows carry the affine when one is present.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/volume.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace asmnet::nifti {

inline constexpr int header_size = 348;
inline constexpr int data_offset = 352;

enum DataType : std::int16_t {
  dt_uint8 = 2,
  dt_int16 = 4,
  dt_float32 = 16,
  dt_uint16 = 512,
};

inline constexpr std::int16_t intent_label = 1002;

namespace offsets {
inline constexpr std::size_t sizeof_hdr = 0;
inline constexpr std::size_t dim = 40;
inline constexpr std::size_t intent_p1 = 56;
inline constexpr std::size_t intent_code = 68;
inline constexpr std::size_t datatype = 70;
inline constexpr std::size_t bitpix = 72;
inline constexpr std::size_t pixdim = 76;
inline constexpr std::size_t vox_offset = 108;
inline constexpr std::size_t scl_slope = 112;
inline constexpr std::size_t xyzt_units = 123;
inline constexpr std::size_t qform_code = 252;
inline constexpr std::size_t sform_code = 254;
inline constexpr std::size_t srow_x = 280;
inline constexpr std::size_t magic = 344;
} // namespace offsets

namespace detail {

static_assert(std::endian::native == std::endian::little, "asmnet::nifti assumes a little-endian host");

template <typename T> void put(std::vector<char> &buf, std::size_t off, T value) {
  std::memcpy(buf.data() + off, &value, sizeof(T));
}
template <typename T> T get(const std::vector<char> &buf, std::size_t off) {
  T value;
  std::memcpy(&value, buf.data() + off, sizeof(T));
  return value;
}

inline std::vector<char> make_header(Dims dims, const Spacing &spacing, const std::optional<Affine> &affine,
                                     std::int16_t datatype, std::int16_t bitpix) {
  std::vector<char> h(data_offset, 0);
  put<std::int32_t>(h, offsets::sizeof_hdr, header_size);
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(dims.x), static_cast<std::int16_t>(dims.y),
                                        static_cast<std::int16_t>(dims.z), 1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i)
    put(h, offsets::dim + 2 * i, dim[i]);
  put(h, offsets::datatype, datatype);
  put(h, offsets::bitpix, bitpix);
  const std::array<float, 8> pixdim{1.f, float(spacing[0]), float(spacing[1]), float(spacing[2]), 1.f, 1.f, 1.f, 1.f};
  for (std::size_t i = 0; i < 8; ++i)
    put(h, offsets::pixdim + 4 * i, pixdim[i]);
  put<float>(h, offsets::vox_offset, float(data_offset));
  put<float>(h, offsets::scl_slope, 1.f);
  h[offsets::xyzt_units] = 2; // mm
  if (affine) {
    put<std::int16_t>(h, offsets::sform_code, 2);
    for (std::size_t i = 0; i < 12; ++i)
      put<float>(h, offsets::srow_x + 4 * i, float((*affine)[i]));
  }
  std::memcpy(h.data() + offsets::magic, "n+1\0", 4);
  return h;
}

inline void write_file(const std::filesystem::path &path, const std::vector<char> &header, const void *data,
                       std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::io, "cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char *>(data), static_cast<std::streamsize>(bytes));
  require(static_cast<bool>(out), Errc::io, "write failed for " + path.string());
}

struct RawImage {
  Dims dims;
  Spacing spacing{};
  std::optional<Affine> affine;
  std::int16_t datatype = 0;
  std::int16_t intent_code = 0;
  float intent_p1 = 0.f;
  std::vector<char> payload;
};

inline RawImage read_raw(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  std::vector<char> h(header_size, 0);
  in.read(h.data(), header_size);
  require(in.gcount() == header_size, Errc::io, path.string() + ": truncated header");

  const auto sizeof_hdr = get<std::int32_t>(h, offsets::sizeof_hdr);
  if (sizeof_hdr == 540)
    fail(Errc::unsupported, path.string() + ": NIfTI-2 is not supported");
  if (static_cast<unsigned char>(h[0]) == 0x1f && static_cast<unsigned char>(h[1]) == 0x8b)
    fail(Errc::unsupported, path.string() + ": gzip-compressed files are not supported");
  require(sizeof_hdr == header_size, Errc::format,
          path.string() + ": sizeof_hdr is " + std::to_string(sizeof_hdr) + " (big-endian or not NIfTI-1)");
  require(std::memcmp(h.data() + offsets::magic, "n+1\0", 4) == 0, Errc::format,
          path.string() + ": bad magic (only single-file n+1 is supported)");

  RawImage raw;
  const auto ndim = get<std::int16_t>(h, offsets::dim);
  require(ndim == 3, Errc::unsupported, path.string() + ": dim[0] must be 3, got " + std::to_string(ndim));
  raw.dims = {get<std::int16_t>(h, offsets::dim + 2), get<std::int16_t>(h, offsets::dim + 4),
              get<std::int16_t>(h, offsets::dim + 6)};
  require(raw.dims.valid(), Errc::format, path.string() + ": non-positive dimension");
  for (std::size_t a = 0; a < 3; ++a)
    raw.spacing[a] = get<float>(h, offsets::pixdim + 4 * (a + 1));
  raw.datatype = get<std::int16_t>(h, offsets::datatype);
  raw.intent_code = get<std::int16_t>(h, offsets::intent_code);
  raw.intent_p1 = get<float>(h, offsets::intent_p1);
  if (get<std::int16_t>(h, offsets::sform_code) > 0) {
    Affine a = identity_affine();
    for (std::size_t i = 0; i < 12; ++i)
      a[i] = get<float>(h, offsets::srow_x + 4 * i);
    raw.affine = a;
  }

  std::size_t elem = 0;
  switch (raw.datatype) {
  case dt_uint8: elem = 1; break;
  case dt_int16:
  case dt_uint16: elem = 2; break;
  case dt_float32: elem = 4; break;
  default: fail(Errc::unsupported, path.string() + ": datatype " + std::to_string(raw.datatype));
  }
  const auto vox_offset = static_cast<std::streamoff>(get<float>(h, offsets::vox_offset));
  require(vox_offset >= header_size, Errc::format, path.string() + ": vox_offset before end of header");
  in.seekg(vox_offset);
  raw.payload.resize(raw.dims.count() * elem);
  in.read(raw.payload.data(), static_cast<std::streamsize>(raw.payload.size()));
  require(static_cast<std::size_t>(in.gcount()) == raw.payload.size(), Errc::io, path.string() + ": truncated data");
  return raw;
}

template <typename Src, typename Dst> void convert(const std::vector<char> &payload, std::vector<Dst> &out) {
  const std::size_t n = payload.size() / sizeof(Src);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Src s;
    std::memcpy(&s, payload.data() + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<Dst>(s);
  }
}

} // namespace detail

inline void write_nifti(const Volume &v, const std::filesystem::path &path) {
  require(v.dims.valid() && v.data.size() == v.dims.count(), Errc::parameter, "invalid volume dims");
  const auto header = detail::make_header(v.dims, v.spacing, v.affine, dt_float32, 32);
  detail::write_file(path, header, v.data.data(), v.data.size() * sizeof(float));
}

inline void write_nifti(const LabelMap &l, const std::filesystem::path &path) {
  require(l.dims.valid() && l.data.size() == l.dims.count(), Errc::parameter, "invalid label map dims");
  auto header = detail::make_header(l.dims, l.spacing, l.affine, dt_uint16, 16);
  detail::put<std::int16_t>(header, offsets::intent_code, intent_label);
  detail::put<float>(header, offsets::intent_p1, float(l.num_classes));
  detail::write_file(path, header, l.data.data(), l.data.size() * sizeof(std::uint16_t));
}

inline Volume read_volume(const std::filesystem::path &path) {
  auto raw = detail::read_raw(path);
  Volume v(raw.dims);
  v.spacing = raw.spacing;
  v.affine = raw.affine;
  switch (raw.datatype) {
  case dt_uint8: detail::convert<std::uint8_t>(raw.payload, v.data); break;
  case dt_int16: detail::convert<std::int16_t>(raw.payload, v.data); break;
  case dt_uint16: detail::convert<std::uint16_t>(raw.payload, v.data); break;
  default: detail::convert<float>(raw.payload, v.data); break;
  }
  return v;
}

/**
 * Loads an integer-typed file as a label map. The class count is, in order of
 * preference: `classes` if given, intent_p1 of a label-intent file, or
 * max(label) + 1 (at least 2).
 */
inline LabelMap read_labels(const std::filesystem::path &path, std::optional<int> classes = std::nullopt) {
  auto raw = detail::read_raw(path);
  LabelMap l;
  l.dims = raw.dims;
  l.spacing = raw.spacing;
  l.affine = raw.affine;
  switch (raw.datatype) {
  case dt_uint8: detail::convert<std::uint8_t>(raw.payload, l.data); break;
  case dt_uint16: detail::convert<std::uint16_t>(raw.payload, l.data); break;
  case dt_int16: {
    std::vector<std::int32_t> tmp;
    detail::convert<std::int16_t>(raw.payload, tmp);
    l.data.resize(tmp.size());
    for (std::size_t i = 0; i < tmp.size(); ++i) {
      require(tmp[i] >= 0, Errc::format, path.string() + ": negative label");
      l.data[i] = static_cast<std::uint16_t>(tmp[i]);
    }
    break;
  }
  default: fail(Errc::unsupported, path.string() + ": label maps must have an integer datatype");
  }
  int max_label = 0;
  for (auto x : l.data)
    max_label = std::max<int>(max_label, x);
  if (classes)
    l.num_classes = *classes;
  else if (raw.intent_code == intent_label && raw.intent_p1 >= 2.f)
    l.num_classes = static_cast<int>(raw.intent_p1);
  else
    l.num_classes = std::max(2, max_label + 1);
  l.validate();
  return l;
}

using Image = std::variant<Volume, LabelMap>;

/// Reads a file as a label map when `as_labels` is set, else as a float volume.
inline Image read_nifti(const std::filesystem::path &path, bool as_labels = false,
                        std::optional<int> classes = std::nullopt) {
  if (as_labels)
    return read_labels(path, classes);
  return read_volume(path);
}

inline void write_nifti(const Image &img, const std::filesystem::path &path) {
  std::visit([&](const auto &x) { write_nifti(x, path); }, img);
}

} // namespace asmnet::nifti
