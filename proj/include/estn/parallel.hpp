#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace estn {

// Worker pool shared by the heavy kernels (conv/dense/matmul). Work items are
// half-open index ranges; every index writes a disjoint output slot, so the
// result is bit-identical for any thread count.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int worker_count() const { return static_cast<int>(workers_.size()); }

    // Runs fn(begin, end) over [0, n) split across the pool plus the calling
    // thread. Falls back to a plain call when the pool is empty or the range
    // is small.
    void run(std::int64_t n, std::int64_t grain, const std::function<void(std::int64_t, std::int64_t)>& fn) {
        const int extra = worker_count();
        if (extra == 0 || n < 2 * std::max<std::int64_t>(grain, 1)) {
            if (n > 0) fn(0, n);
            return;
        }
        const int parts = std::min<std::int64_t>(extra + 1, std::max<std::int64_t>(1, n / std::max<std::int64_t>(grain, 1)));
        if (parts <= 1) {
            fn(0, n);
            return;
        }
        const std::int64_t chunk = (n + parts - 1) / parts;
        {
            std::unique_lock<std::mutex> lock(mu_);
            pending_ = 0;
            for (int p = 1; p < parts; ++p) {
                const std::int64_t b = p * chunk;
                const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
                if (b >= e) continue;
                tasks_.push_back([&fn, b, e] { fn(b, e); });
                ++pending_;
            }
        }
        cv_.notify_all();
        fn(0, std::min<std::int64_t>(chunk, n));
        std::unique_lock<std::mutex> lock(mu_);
        done_cv_.wait(lock, [this] { return pending_ == 0 && tasks_.empty(); });
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

private:
    ThreadPool() {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        if (const char* env = std::getenv("ESTN_THREADS")) {
            const int cap = std::atoi(env);
            if (cap >= 1) n = std::min(n, cap);
        }
        for (int i = 0; i < n - 1; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
                if (stop_ && tasks_.empty()) return;
                task = std::move(tasks_.back());
                tasks_.pop_back();
            }
            task();
            {
                std::unique_lock<std::mutex> lock(mu_);
                --pending_;
                if (pending_ == 0 && tasks_.empty()) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::vector<std::function<void()>> tasks_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::int64_t pending_ = 0;
    bool stop_ = false;
};

// fn(i0, i1) must touch only outputs indexed in [i0, i1).
inline void parallel_for(std::int64_t n, std::int64_t grain, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    ThreadPool::instance().run(n, grain, fn);
}

}  // namespace estn
