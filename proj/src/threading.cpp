#include "decode/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace decode {

namespace {

thread_local bool t_in_worker = false;

class Pool {
public:
    explicit Pool(size_t n_workers) {
        for (size_t i = 0; i < n_workers; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void run(size_t n_chunks, const std::function<void(size_t)>& chunk_fn) {
        std::unique_lock<std::mutex> lk(mu_);
        chunk_fn_ = &chunk_fn;
        next_chunk_ = 0;
        total_chunks_ = n_chunks;
        pending_ = n_chunks;
        error_ = nullptr;
        ++generation_;
        cv_.notify_all();
        // main thread helps
        lk.unlock();
        drain();
        lk.lock();
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        chunk_fn_ = nullptr;
        if (error_) std::rethrow_exception(error_);
    }

private:
    void drain() {
        for (;;) {
            size_t c = next_chunk_.fetch_add(1);
            if (c >= total_chunks_) break;
            try {
                (*chunk_fn_)(c);
            } catch (...) {
                std::lock_guard<std::mutex> lk(mu_);
                if (!error_) error_ = std::current_exception();
            }
            if (pending_.fetch_sub(1) == 1) done_cv_.notify_all();
        }
    }

    void worker_loop() {
        t_in_worker = true;
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            drain();
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(size_t)>* chunk_fn_ = nullptr;
    std::atomic<size_t> next_chunk_{0};
    size_t total_chunks_ = 0;
    std::atomic<size_t> pending_{0};
    uint64_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

Pool* pool() {
    static Pool* p = [] {
        size_t n = max_threads();
        return n > 1 ? new Pool(n - 1) : nullptr;  // main thread participates
    }();
    return p;
}

}  // namespace

size_t max_threads() {
    static size_t cached = [] {
        if (const char* env = std::getenv("DECODE_THREADS")) {
            long v = std::atol(env);
            if (v >= 1) return static_cast<size_t>(v);
        }
        size_t hw = std::thread::hardware_concurrency();
        return hw ? hw : size_t{1};
    }();
    return cached;
}

void parallel_for_chunks(size_t n, const std::function<void(size_t, size_t)>& fn) {
    if (n == 0) return;
    size_t threads = max_threads();
    if (n == 1 || threads == 1 || t_in_worker || pool() == nullptr) {
        fn(0, n);
        return;
    }
    size_t n_chunks = std::min(n, threads * 4);
    size_t per = (n + n_chunks - 1) / n_chunks;
    std::function<void(size_t)> chunk_fn = [&](size_t c) {
        size_t b = c * per;
        size_t e = std::min(n, b + per);
        if (b < e) fn(b, e);
    };
    pool()->run(n_chunks, chunk_fn);
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    parallel_for_chunks(n, [&](size_t b, size_t e) {
        for (size_t i = b; i < e; ++i) fn(i);
    });
}

}  // namespace decode
