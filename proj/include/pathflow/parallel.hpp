// Copyright 2026 The pathflow Authors.
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


#ifndef PATHFLOW_PARALLEL_HPP
#define PATHFLOW_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace pathflow {

/// Worker count for batch loops, from the PATHFLOW_THREADS environment variable (default 1).
[[nodiscard]] inline std::size_t thread_count() {
  const char* env = std::getenv("PATHFLOW_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const long v = std::stol(env);
    return v < 1 ? 1 : static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    return 1;
  }
}

/// Splits [0, n) into contiguous chunks, one per worker, and calls body(worker, begin, end).
///
/// Chunk boundaries depend only on n and the worker count. The first exception
/// thrown by any worker is rethrown on the calling thread.
template <class Body>
void parallel_for_workers(std::size_t n, Body&& body, std::size_t workers = thread_count()) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    if (n > 0) body(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      try {
        body(w, begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// As parallel_for_workers, calling body(begin, end).
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t workers = thread_count()) {
  parallel_for_workers(
      n, [&](std::size_t, std::size_t begin, std::size_t end) { body(begin, end); }, workers);
}

}  // namespace pathflow

#endif
