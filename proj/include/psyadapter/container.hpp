// SPDX-License-Identifier: Apache-2.0
//
// Binary container shared by the model, adapter, scoring and topic files:
//
//   bytes 0..7    8-byte ASCII magic, e.g. "PSYADPT1"
//   bytes 8..15   u64 little-endian length N of the metadata block
//   next N bytes  UTF-8 JSON metadata; its "arrays" member lists
//                 {"name", "rows", "cols"} for each payload array in order
//   remainder     the arrays back to back, IEEE-754 float32 little-endian,
//                 row-major
//
// The file must end exactly after the last array.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace psyadapter::io {

struct Array {
  std::string name;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<float> data;
};

struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<Array> arrays;

  const Array& find(std::string_view name) const;
  const Array* try_find(std::string_view name) const;
};

std::vector<std::uint8_t> encode(std::string_view magic, const Container& c);
Container decode(std::string_view magic, const std::vector<std::uint8_t>& bytes);

void write_file(const std::filesystem::path& path, std::string_view magic, const Container& c);
Container read_file(const std::filesystem::path& path, std::string_view magic);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Values narrowed to float32 for storage.
std::vector<float> to_f32(std::span<const double> v);
std::vector<double> to_f64(const std::vector<float>& v);

}  // namespace psyadapter::io
