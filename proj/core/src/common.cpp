#include "msnc/common.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace msnc {

namespace {

#if defined(__GLIBC__)
// Activation buffers run 0.1-2 MB and turn over thousands of times per
// training step; keep them on the heap instead of per-allocation mmaps.
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 26);
    mallopt(M_TRIM_THRESHOLD, 1 << 26);
  }
} g_malloc_tuning;
#endif

int default_threads() {
  if (const char* env = std::getenv("MSNC_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return std::min(n, 64);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(std::min(hc, 8u));
}

std::atomic<int> g_threads{0};

#if defined(__x86_64__) || defined(__i386__)
inline void cpu_relax() { __builtin_ia32_pause(); }
#else
inline void cpu_relax() { std::this_thread::yield(); }
#endif

// Persistent pool with spin-then-yield waits; dispatch latency matters more
// than idle cycles here because a training step issues thousands of short
// parallel regions. Workers pick fixed chunk ids so the partition of an
// n-element range depends only on n and the worker count.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(int workers, const std::function<void(int, int)>& task) {
    ensure(workers - 1);
    // Every spawned thread acknowledges each generation, participant or not,
    // so the pending counter always returns to exactly zero.
    const int spawned = static_cast<int>(threads_.size());
    task_ = &task;
    workers_ = workers;
    pending_.store(spawned, std::memory_order_relaxed);
    generation_.fetch_add(1, std::memory_order_release);

    task(0, workers);

    int spins = 0;
    while (pending_.load(std::memory_order_acquire) != 0) {
      if (++spins < 4096) {
        cpu_relax();
      } else {
        std::this_thread::yield();
      }
    }
    task_ = nullptr;
  }

 private:
  void ensure(int n) {
    bool grew = false;
    while (static_cast<int>(threads_.size()) < n) {
      int self = static_cast<int>(threads_.size()) + 1;
      threads_.emplace_back([this, self] { worker(self); });
      grew = true;
    }
    // New workers must capture the pre-dispatch generation before the next
    // increment, or they would miss it and stall the pending counter.
    if (grew) {
      while (ready_.load(std::memory_order_acquire) < static_cast<int>(threads_.size()))
        cpu_relax();
    }
  }

  void worker(int self) {
    uint64_t seen = generation_.load(std::memory_order_acquire);
    ready_.fetch_add(1, std::memory_order_release);
    for (;;) {
      int64_t spins = 0;
      uint64_t gen;
      while ((gen = generation_.load(std::memory_order_acquire)) == seen) {
        if (stop_.load(std::memory_order_relaxed)) return;
        // Dispatches arrive every few microseconds during training; spin for
        // about a millisecond before conceding the core.
        if (++spins < (1 << 19)) {
          cpu_relax();
        } else {
          std::this_thread::sleep_for(std::chrono::microseconds(20));
        }
      }
      seen = gen;
      if (self < workers_) {
        const auto* task = task_;
        if (task) (*task)(self, workers_);
      }
      pending_.fetch_sub(1, std::memory_order_release);
    }
  }

  ~Pool() {
    stop_.store(true);
    for (auto& t : threads_) t.join();
  }

  std::vector<std::thread> threads_;
  const std::function<void(int, int)>* task_ = nullptr;
  std::atomic<int> workers_{0};
  std::atomic<int> pending_{0};
  std::atomic<int> ready_{0};
  std::atomic<uint64_t> generation_{0};
  std::atomic<bool> stop_{false};
};

}  // namespace

int num_threads() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n == 0) {
    n = default_threads();
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_num_threads(int n) { g_threads.store(std::max(1, n), std::memory_order_relaxed); }

namespace {
thread_local bool t_inside_parallel = false;
}

SerialSectionGuard::SerialSectionGuard() : prev_(t_inside_parallel) {
  t_inside_parallel = true;
}
SerialSectionGuard::~SerialSectionGuard() { t_inside_parallel = prev_; }

void parallel_for(int64_t n, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  int workers = num_threads();
  // Nested calls run serially; the pool is not reentrant.
  if (workers <= 1 || t_inside_parallel || n < 2 * std::max<int64_t>(grain, 1)) {
    body(0, n);
    return;
  }
  workers = static_cast<int>(std::min<int64_t>(workers, (n + grain - 1) / grain));
  Pool::instance().run(workers, [&](int w, int count) {
    t_inside_parallel = true;
    int64_t chunk = (n + count - 1) / count;
    int64_t begin = w * chunk;
    int64_t end = std::min<int64_t>(n, begin + chunk);
    if (begin < end) body(begin, end);
    t_inside_parallel = false;
  });
}

}  // namespace msnc
