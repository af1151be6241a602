#include "ksafem/worker_pool.hpp"

#include <algorithm>

namespace ksafem {

WorkerPool::WorkerPool(int n_workers) {
    const int extra = std::max(0, n_workers - 1);
    threads_.reserve(extra);
    for (int i = 0; i < extra; ++i) threads_.emplace_back([this] { worker_loop(); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard<std::mutex> lk(mu_);
        stop_ = true;
    }
    cv_work_.notify_all();
    for (auto& t : threads_) t.join();
}

void WorkerPool::worker_loop() {
    unsigned long long seen = 0;
    while (true) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_work_.wait(lk, [&] { return stop_ || (job_ && generation_ != seen); });
        if (stop_) return;
        seen = generation_;
        while (job_ && next_item_ < n_items_) {
            const int i = next_item_++;
            ++in_flight_;
            lk.unlock();
            try {
                (*job_)(i);
            } catch (...) {
                lk.lock();
                if (!error_) error_ = std::current_exception();
                --in_flight_;
                cv_done_.notify_all();
                continue;
            }
            lk.lock();
            --in_flight_;
        }
        cv_done_.notify_all();
    }
}

void WorkerPool::parallel_for(int n_items, const std::function<void(int)>& f) {
    if (n_items <= 0) return;
    std::unique_lock<std::mutex> lk(mu_);
    job_ = &f;
    n_items_ = n_items;
    next_item_ = 0;
    error_ = nullptr;
    ++generation_;
    cv_work_.notify_all();
    // the calling thread works too
    while (next_item_ < n_items_) {
        const int i = next_item_++;
        ++in_flight_;
        lk.unlock();
        try {
            f(i);
        } catch (...) {
            lk.lock();
            if (!error_) error_ = std::current_exception();
            --in_flight_;
            continue;
        }
        lk.lock();
        --in_flight_;
    }
    cv_done_.wait(lk, [&] { return in_flight_ == 0; });
    job_ = nullptr;
    if (error_) {
        auto e = error_;
        error_ = nullptr;
        lk.unlock();
        std::rethrow_exception(e);
    }
}

} // namespace ksafem
