// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <variant>

namespace nopkit {

using AnyTensor = std::variant<RTensor, CTensor>;

// Binary tensor record:
//   "NTNS" | version u32 LE | dtype u8 (0 real f64, 1 complex f64) | ndim u8 |
//   extents u64 LE x ndim | payload row-major, little-endian.
inline constexpr std::uint32_t kTensorRecordVersion = 1;

void write_tensor(std::ostream& os, const AnyTensor& t);
[[nodiscard]] AnyTensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const AnyTensor& t);
[[nodiscard]] AnyTensor load_tensor(const std::filesystem::path& path);
[[nodiscard]] RTensor load_real_tensor(const std::filesystem::path& path);

/// Text manifest of key=value lines, '#' comments. Keys are kept sorted.
using Manifest = std::map<std::string, std::string>;

void save_manifest(const std::filesystem::path& path, const Manifest& m);
[[nodiscard]] Manifest load_manifest(const std::filesystem::path& path);

} // namespace nopkit
