// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/container.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include "psyadapter/errors.hpp"

namespace psyadapter {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::io: return "io";
    case FormatErrorKind::bad_magic: return "bad_magic";
    case FormatErrorKind::corrupt_header: return "corrupt_header";
    case FormatErrorKind::metadata_mismatch: return "metadata_mismatch";
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::trailing_data: return "trailing_data";
    case FormatErrorKind::malformed_record: return "malformed_record";
  }
  return "unknown";
}

namespace io {
namespace {

constexpr std::size_t kMagicLen = 8;
constexpr std::uint64_t kMaxMetadata = 1ull << 30;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void check_magic(std::string_view magic) {
  if (magic.size() != kMagicLen) throw ContractError("container magic must be 8 bytes");
}

}  // namespace

const Array* Container::try_find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const Array& Container::find(std::string_view name) const {
  if (const Array* a = try_find(name)) return *a;
  throw FormatError(FormatErrorKind::metadata_mismatch,
                    "missing array '" + std::string(name) + "'");
}

std::vector<std::uint8_t> encode(std::string_view magic, const Container& c) {
  check_magic(magic);
  nlohmann::json meta = c.metadata;
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    if (a.data.size() != a.rows * a.cols) {
      throw ShapeError("array '" + a.name + "' holds " + std::to_string(a.data.size()) +
                       " values for shape " + std::to_string(a.rows) + "x" +
                       std::to_string(a.cols));
    }
    listing.push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
  }
  meta["arrays"] = std::move(listing);
  const std::string text = meta.dump(1);

  std::vector<std::uint8_t> out(magic.begin(), magic.end());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : c.arrays) {
    for (float f : a.data) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

Container decode(std::string_view magic, const std::vector<std::uint8_t>& bytes) {
  check_magic(magic);
  if (bytes.size() < kMagicLen + 8) {
    throw FormatError(FormatErrorKind::corrupt_header, "file shorter than its fixed header");
  }
  if (!std::equal(magic.begin(), magic.end(), bytes.begin())) {
    throw FormatError(FormatErrorKind::bad_magic,
                      "expected magic '" + std::string(magic) + "'");
  }
  const std::uint64_t meta_len = get_u64(bytes.data() + kMagicLen);
  const std::size_t meta_start = kMagicLen + 8;
  if (meta_len > kMaxMetadata || meta_len > bytes.size() - meta_start) {
    throw FormatError(FormatErrorKind::corrupt_header, "metadata length exceeds file size");
  }
  Container c;
  try {
    c.metadata = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(meta_start),
                                       bytes.begin() +
                                           static_cast<std::ptrdiff_t>(meta_start + meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::corrupt_header,
                      std::string("metadata is not valid JSON: ") + e.what());
  }
  if (!c.metadata.is_object() || !c.metadata.contains("arrays") ||
      !c.metadata["arrays"].is_array()) {
    throw FormatError(FormatErrorKind::corrupt_header, "metadata lacks an 'arrays' listing");
  }

  std::size_t pos = meta_start + meta_len;
  try {
    for (const auto& entry : c.metadata["arrays"]) {
      Array a;
      a.name = entry.at("name").get<std::string>();
      a.rows = entry.at("rows").get<std::uint64_t>();
      a.cols = entry.at("cols").get<std::uint64_t>();
      if (a.cols != 0 && a.rows > (std::uint64_t{1} << 40) / a.cols) {
        throw FormatError(FormatErrorKind::corrupt_header, "array '" + a.name + "' is too large");
      }
      const std::uint64_t n = a.rows * a.cols;
      if (n * 4 > bytes.size() - pos) {
        throw FormatError(FormatErrorKind::truncated,
                          "payload ends inside array '" + a.name + "'");
      }
      a.data.resize(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[pos + b]) << (8 * b);
        a.data[i] = std::bit_cast<float>(bits);
        pos += 4;
      }
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::corrupt_header,
                      std::string("malformed array listing: ") + e.what());
  }
  if (pos != bytes.size()) {
    throw FormatError(FormatErrorKind::trailing_data,
                      std::to_string(bytes.size() - pos) + " bytes after the last array");
  }
  c.metadata.erase("arrays");
  return c;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::io, "short write to '" + path.string() + "'");
}

void write_file(const std::filesystem::path& path, std::string_view magic, const Container& c) {
  write_bytes(path, encode(magic, c));
}

Container read_file(const std::filesystem::path& path, std::string_view magic) {
  return decode(magic, read_bytes(path));
}

std::vector<float> to_f32(std::span<const double> v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

std::vector<double> to_f64(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace io
}  // namespace psyadapter
