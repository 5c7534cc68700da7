// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace stran {

/// Worker cap: hardware concurrency, lowered by STRAN_THREADS when set, or
/// by set_worker_count() (0 restores the environment default).
std::size_t worker_count();
void set_worker_count(std::size_t n);

/// Runs fn(i) for every i in [0, count). Tasks must write disjoint outputs;
/// the split into tasks is the caller's, so results never depend on how
/// many workers execute them.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace stran
