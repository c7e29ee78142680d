// Copyright 2026 The velmfg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Deterministic data parallelism. Work is split into a fixed set of tasks
// that never depends on the thread count, so every reduction happens in the
// same order regardless of how many workers run it.

#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace velmfg {

inline constexpr const char* kThreadsEnvVar = "VELMFG_THREADS";

namespace detail {

inline int& ThreadCountStorage() {
  static int count = [] {
    if (const char* env = std::getenv(kThreadsEnvVar)) {
      try {
        const int n = std::stoi(env);
        if (n >= 1) return n;
      } catch (...) {
      }
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }();
  return count;
}

class WorkerPool {
 public:
  explicit WorkerPool(int workers) {
    for (int w = 0; w < workers; ++w) threads_.emplace_back([this] { Loop(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return static_cast<int>(threads_.size()); }

  // Runs fn(task) for task in [0, n), the caller participating.
  void Run(int n, const std::function<void(int)>& fn) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      job_ = &fn;
      n_tasks_ = n;
      next_.store(0);
      pending_ = static_cast<int>(threads_.size());
      ++generation_;
    }
    cv_.notify_all();
    Drain(fn, n);
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void Drain(const std::function<void(int)>& fn, int n) {
    for (int t = next_.fetch_add(1); t < n; t = next_.fetch_add(1)) fn(t);
  }

  void Loop() {
    long seen = 0;
    while (true) {
      const std::function<void(int)>* job;
      int n;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
        n = n_tasks_;
      }
      Drain(*job, n);
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  int n_tasks_ = 0;
  std::atomic<int> next_{0};
  int pending_ = 0;
  long generation_ = 0;
  bool stop_ = false;
};

inline std::unique_ptr<WorkerPool>& PoolStorage() {
  static std::unique_ptr<WorkerPool> pool;
  return pool;
}

}  // namespace detail

inline int ThreadCount() { return detail::ThreadCountStorage(); }

inline void SetThreadCount(int n) {
  detail::ThreadCountStorage() = std::max(1, n);
  detail::PoolStorage().reset();
}

// Runs fn(task) for every task in [0, n). Tasks must write disjoint memory.
inline void ParallelFor(int n, const std::function<void(int)>& fn) {
  const int threads = ThreadCount();
  if (threads <= 1 || n <= 1) {
    for (int t = 0; t < n; ++t) fn(t);
    return;
  }
  auto& pool = detail::PoolStorage();
  if (!pool || pool->size() != threads - 1) pool = std::make_unique<detail::WorkerPool>(threads - 1);
  pool->Run(n, fn);
}

// Visits every unordered pair {i, j}, i < j, of [0, n) exactly once.
//
// Particles are cut into a fixed number of blocks; block pairs are scheduled
// by the round-robin (circle) method so that the tasks of one round touch
// disjoint blocks. Rounds run in a fixed order, hence every per-particle
// accumulator receives its contributions in the same order for any thread
// count. fn(i, j) may write to accumulators of both i and j.
inline void ForEachPairDeterministic(int n, const std::function<void(int, int)>& fn) {
  if (n < 2) return;
  constexpr int kMaxBlocks = 16;
  const int blocks = std::min(n, kMaxBlocks);
  auto block_begin = [&](int b) { return static_cast<int>((static_cast<long>(n) * b) / blocks); };

  // Round 0: pairs inside each block.
  ParallelFor(blocks, [&](int b) {
    const int lo = block_begin(b), hi = block_begin(b + 1);
    for (int i = lo; i < hi; ++i)
      for (int j = i + 1; j < hi; ++j) fn(i, j);
  });

  // Circle method on an even number of slots; slot == blocks is a bye.
  const int slots = blocks + (blocks % 2);
  std::vector<std::pair<int, int>> matches;
  for (int round = 0; round < slots - 1; ++round) {
    matches.clear();
    for (int m = 0; m < slots / 2; ++m) {
      int a = (m == 0) ? slots - 1 : (round + m) % (slots - 1);
      int b = (round + slots - 1 - m) % (slots - 1);
      if (a >= blocks || b >= blocks || a == b) continue;
      if (a > b) std::swap(a, b);
      matches.emplace_back(a, b);
    }
    ParallelFor(static_cast<int>(matches.size()), [&](int t) {
      const auto [a, b] = matches[t];
      const int alo = block_begin(a), ahi = block_begin(a + 1);
      const int blo = block_begin(b), bhi = block_begin(b + 1);
      for (int i = alo; i < ahi; ++i)
        for (int j = blo; j < bhi; ++j) fn(i, j);
    });
  }
}

}  // namespace velmfg
