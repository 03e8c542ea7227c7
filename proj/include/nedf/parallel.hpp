// Copyright 2026 The nedf-compose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace nedf {

/// Process-wide cap on worker threads; values < 1 reset to the hardware concurrency.
void set_max_threads(int n);
int max_threads();

/// Runs fn(i) for i in [0, n) across up to max_threads() workers. Work items must write disjoint
/// state; the first exception thrown by any item is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace nedf
