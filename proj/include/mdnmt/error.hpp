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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mdnmt {

// Base of every error the toolkit throws. Each subclass maps onto one CLI
// exit code (see ExitCode in commands.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: files, corpora, model files.
class DataError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public DataError {
 public:
  AlignmentError(const std::string& source_path, std::size_t source_lines,
                 const std::string& target_path, std::size_t target_lines)
      : DataError("line count mismatch: " + source_path + " has " +
                  std::to_string(source_lines) + " lines, " + target_path +
                  " has " + std::to_string(target_lines)),
        source_lines_(source_lines),
        target_lines_(target_lines) {}

  std::size_t source_lines() const { return source_lines_; }
  std::size_t target_lines() const { return target_lines_; }

 private:
  std::size_t source_lines_;
  std::size_t target_lines_;
};

class DecodeError : public DataError {
 public:
  DecodeError(const std::string& path, std::size_t line)
      : DataError("invalid UTF-8 in " + path + " at line " + std::to_string(line)),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class CollisionError : public DataError {
 public:
  using DataError::DataError;
};

// Raised when a corpus already carries a domain tag.
class DoubleTagError : public CollisionError {
 public:
  using CollisionError::CollisionError;
};

class CapacityError : public DataError {
 public:
  using DataError::DataError;
};

class SegmentationError : public DataError {
 public:
  using DataError::DataError;
};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

class LengthMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class UnknownDomainError : public DataError {
 public:
  explicit UnknownDomainError(const std::string& name)
      : DataError("unknown domain: " + name) {}
};

class IncompatibleModelsError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Invalid configuration or arguments; the caller got the contract wrong.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training or evaluation produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace mdnmt
