#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ksafem {

/// Persistent thread pool for index-parallel work. Items are claimed through
/// an atomic counter; each item writes only its own slot, so results do not
/// depend on scheduling. Reductions over item results are done by the caller
/// in fixed index order, which keeps runs bitwise reproducible for any
/// worker count.
class WorkerPool {
public:
    explicit WorkerPool(int n_workers);
    ~WorkerPool();

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    int size() const { return static_cast<int>(threads_.size()) + 1; }

    /// Runs f(i) for i in [0, n_items); blocks until all items finish.
    /// The calling thread participates. Exceptions are rethrown to the caller.
    void parallel_for(int n_items, const std::function<void(int)>& f);

private:
    void worker_loop();

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_work_;
    std::condition_variable cv_done_;
    const std::function<void(int)>* job_ = nullptr;
    int n_items_ = 0;
    int next_item_ = 0;
    int in_flight_ = 0;
    unsigned long long generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

} // namespace ksafem
