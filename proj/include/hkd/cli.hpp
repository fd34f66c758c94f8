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

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace hkd {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;
inline constexpr int kExitIo = 3;

// Experiment record kept next to the artifacts it describes. Each command
// merges its own entry, keyed by command name, and rewrites the file
// atomically.
struct ManifestEntry {
  std::string command;
  nlohmann::json config;
  std::string config_hash;
  nlohmann::json inputs = nlohmann::json::object();     // name -> {path, hash}
  nlohmann::json artifacts = nlohmann::json::object();  // name -> {path, hash}

  void add_input(const std::string& name, const std::filesystem::path& path);
  void add_artifact(const std::string& name, const std::filesystem::path& path);
};

void update_manifest(const std::filesystem::path& manifest, const std::string& experiment,
                     const ManifestEntry& entry);

// Parses argv, runs one subcommand and maps failures onto the exit codes.
int run_cli(const std::vector<std::string>& args);

}  // namespace hkd
