// Copyright 2026 The mdnmt Authors. All Rights Reserved.
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
#include <map>
#include <string>

namespace mdnmt {

// Lower-case hex SHA-256 of a file's bytes or of a string.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_string(const std::string& data);

// Input and artifact checksums of a workspace, stored as manifest.json.
struct Manifest {
  std::string config_sha256;
  std::map<std::string, std::string> inputs;     // input path -> sha256
  std::map<std::string, std::string> artifacts;  // workspace-relative path -> sha256

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

// Exclusive lock on a workspace (a "lock" file created with O_EXCL).
// Throws DataError when another command holds it.
class WorkspaceLock {
 public:
  explicit WorkspaceLock(const std::filesystem::path& workspace);
  ~WorkspaceLock();
  WorkspaceLock(const WorkspaceLock&) = delete;
  WorkspaceLock& operator=(const WorkspaceLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Writes `content` only when it differs from the file on disk, so re-runs
// leave unchanged artifacts untouched.
void write_if_changed(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace mdnmt
