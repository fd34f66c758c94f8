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

#include <stdexcept>
#include <string>

namespace hkd {

// Every failure raised by the library derives from Error. The CLI maps the
// category onto its exit codes, so new error types must pick one.
enum class ErrorCategory { kUsage, kNumeric, kIo };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define HKD_DEFINE_ERROR(Name, Category)                       \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& what)                     \
        : Error(ErrorCategory::Category, #Name ": " + what) {} \
  }

HKD_DEFINE_ERROR(DimensionError, kUsage);
HKD_DEFINE_ERROR(ParameterError, kUsage);
HKD_DEFINE_ERROR(ValidationError, kUsage);
HKD_DEFINE_ERROR(ConfigError, kUsage);
HKD_DEFINE_ERROR(CapacityError, kUsage);
HKD_DEFINE_ERROR(IncompatibilityError, kUsage);
HKD_DEFINE_ERROR(NumericError, kNumeric);
HKD_DEFINE_ERROR(IngestionError, kIo);
HKD_DEFINE_ERROR(IoError, kIo);

#undef HKD_DEFINE_ERROR

}  // namespace hkd
