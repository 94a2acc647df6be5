#include "hpalf/common.hpp"

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

namespace hpalf {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::config: return "config";
    case ErrorCode::contract: return "contract";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::io: return "io";
    case ErrorCode::internal: return "internal";
  }
  return "unknown";
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

int worker_threads() {
  static int cached = [] {
    const char* env = std::getenv("HPALF_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n > 0 ? n : 1;
  }();
  return cached;
}

namespace {

class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { run(); });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void submit(std::function<void()> task) {
    {
      std::unique_lock<std::mutex> lk(mu_);
      tasks_.push_back(std::move(task));
      ++pending_;
    }
    cv_.notify_one();
  }

  void wait() {
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.back());
        tasks_.pop_back();
      }
      task();
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  int pending_ = 0;
  bool stop_ = false;
};

}  // namespace

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int workers = worker_threads();
  if (workers <= 1 || n == 1) {
    fn(0, n);
    return;
  }
  // Calling thread runs chunk 0; the pool holds the remaining workers.
  static Pool* pool = new Pool(worker_threads() - 1);
  int chunks = static_cast<int>(std::min<int64_t>(workers, n));
  int64_t per = (n + chunks - 1) / chunks;
  for (int c = 1; c < chunks; ++c) {
    int64_t b = c * per;
    int64_t e = std::min<int64_t>(n, b + per);
    if (b >= e) break;
    pool->submit([b, e, &fn] { fn(b, e); });
  }
  fn(0, std::min<int64_t>(n, per));
  pool->wait();
}

}  // namespace hpalf
