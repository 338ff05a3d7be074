/*
 * Copyright 2026 The srwm-acl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace srwm {

// Build-wide floating point type. 64-bit unless configured with SRWM_REAL_FLOAT.
#ifdef SRWM_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

inline constexpr const char* kRealName = sizeof(Real) == 8 ? "f64" : "f32";

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// API misuse: calling an operation outside its precondition.
struct ContractError : Error {
    using Error::Error;
};

struct LookupError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct SamplingError : Error {
    using Error::Error;
};

// Non-finite values in a forward pass, loss or gradient.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace srwm
