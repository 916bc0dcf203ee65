#include "sdn/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace sdn {
namespace {

int resolve_worker_count() {
  int hw = int(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  int n = 0;
  if (const char* env = std::getenv("SPLATDENOISE_THREADS")) {
    n = std::atoi(env);
  }
  if (n <= 0) n = hw;
  if (n > hw) n = hw;
  if (n > 64) n = 64;
  return n;
}

// A minimal persistent pool: one job at a time, dispatched as an atomically
// incremented chunk counter so workers stay busy without per-index locking.
class Pool {
 public:
  explicit Pool(int workers) : workers_(workers) {
    for (int i = 0; i < workers_ - 1; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(m_);
      stop_ = true;
      ++job_id_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(std::int64_t n, std::int64_t chunk, const std::function<void(std::int64_t)>& fn) {
    {
      std::unique_lock<std::mutex> lk(m_);
      fn_ = &fn;
      n_ = n;
      chunk_ = chunk;
      next_.store(0, std::memory_order_relaxed);
      active_ = workers_ - 1;
      ++job_id_;
    }
    cv_.notify_all();
    work();  // participate
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [this] { return active_ == 0; });
    fn_ = nullptr;
  }

 private:
  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
        seen = job_id_;
        if (stop_) return;
      }
      work();
      {
        std::unique_lock<std::mutex> lk(m_);
        if (--active_ == 0) done_cv_.notify_all();
      }
    }
  }

  void work() {
    const std::function<void(std::int64_t)>* fn = fn_;
    if (!fn) return;
    for (;;) {
      std::int64_t begin = next_.fetch_add(chunk_, std::memory_order_relaxed);
      if (begin >= n_) break;
      std::int64_t end = begin + chunk_ < n_ ? begin + chunk_ : n_;
      for (std::int64_t i = begin; i < end; ++i) (*fn)(i);
    }
  }

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(std::int64_t)>* fn_ = nullptr;
  std::int64_t n_ = 0, chunk_ = 1;
  std::atomic<std::int64_t> next_{0};
  std::uint64_t job_id_ = 0;
  int active_ = 0;
  bool stop_ = false;
};

Pool& pool() {
  static Pool p(resolve_worker_count());
  return p;
}

}  // namespace

int worker_count() {
  static int n = resolve_worker_count();
  return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  if (n <= 0) return;
  if (worker_count() == 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::int64_t chunk = n / (4 * worker_count());
  if (chunk < 1) chunk = 1;
  pool().run(n, chunk, fn);
}

}  // namespace sdn
