#pragma once

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fluidanim {

// Splits [begin, end) into `workers` contiguous chunks and runs
// fn(chunk_begin, chunk_end) on each, the first chunk on the calling thread.
// Chunk boundaries depend only on the range and worker count, so any
// per-chunk reduction merged in chunk order is deterministic.
template <class Fn>
void parallel_for(int begin, int end, int workers, Fn&& fn) {
  const int n = end - begin;
  if (n <= 0) return;
  workers = std::clamp(workers, 1, n);
  if (workers == 1) {
    fn(begin, end);
    return;
  }

  std::vector<std::exception_ptr> errors(workers);
  auto chunk_bound = [&](int i) { return begin + static_cast<int>(static_cast<long long>(n) * i / workers); };
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers - 1);
    for (int i = 1; i < workers; ++i) {
      threads.emplace_back([&, i] {
        try {
          fn(chunk_bound(i), chunk_bound(i + 1));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    try {
      fn(chunk_bound(0), chunk_bound(1));
    } catch (...) {
      errors[0] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Number of chunks parallel_for will use for a range of `n` items.
inline int effective_workers(int n, int workers) { return std::clamp(workers, 1, std::max(n, 1)); }

// Fixed-size FIFO pool for long-running jobs (render jobs in the service).
class WorkerPool {
 public:
  explicit WorkerPool(int threads) {
    threads = std::max(threads, 1);
    for (int i = 0; i < threads; ++i)
      threads_.emplace_back([this](std::stop_token st) { run(st); });
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  ~WorkerPool() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
  }

  void submit(std::function<void()> job) {
    {
      std::lock_guard lock(mutex_);
      jobs_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

 private:
  void run(std::stop_token) {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::vector<std::jthread> threads_;  // last member: joins before the rest is destroyed
};

}  // namespace fluidanim
