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

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mdnmt::text {

// Splits a UTF-8 string into one string per code point. Returns nullopt on
// malformed input (overlong forms, surrogates, truncated sequences).
std::optional<std::vector<std::string>> utf8_chars(std::string_view s);

bool is_valid_utf8(std::string_view s);

// ASCII whitespace: space, \t, \n, \v, \f, \r.
bool is_space(char c);

std::vector<std::string> split_whitespace(std::string_view s);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

// Lowercases ASCII letters only.
std::string ascii_lower(std::string_view s);

}  // namespace mdnmt::text
