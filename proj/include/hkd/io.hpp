// Copyright 2026 The hkd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace hkd {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = kFnvOffset);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = kFnvOffset);
std::string hex64(std::uint64_t value);

// Content hash of a file as 16 hex digits.
std::string hash_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Shortest decimal text that round-trips, for CSV output.
std::string format_real(double value);

}  // namespace hkd
