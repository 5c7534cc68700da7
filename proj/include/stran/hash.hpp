// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "stran/tensor.hpp"

namespace stran {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;

/// 64-bit FNV-1a; pass a previous result as `state` to continue a stream.
inline std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                             std::uint64_t state = kFnvOffset) {
  for (std::byte b : bytes) {
    state ^= static_cast<std::uint64_t>(b);
    state *= 1099511628211ull;
  }
  return state;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t state = kFnvOffset) {
  return fnv1a64(std::as_bytes(std::span<const char>(s.data(), s.size())), state);
}

/// Hash of shape, dtype and raw element bytes.
std::uint64_t tensor_hash(const Tensor& t, std::uint64_t state = kFnvOffset);

}  // namespace stran
