#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bsheat {

// Caller broke a documented precondition (bad level, shape mismatch, p < 1, ...).
class usage_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A run configuration is inconsistent or exceeds a resource cap.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Supplied numerical data is unusable (non-finite values and the like).
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw usage_error(what);
}

// Neumaier compensated accumulator. Reductions over tree nodes use a fixed
// ascending order plus compensation so expectations are deterministic and
// accurate to a few ulp even across thousands of terms.
class NeumaierSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Runs f(i) for i in [0, n). With jobs > 1 the index range is split into
// contiguous chunks on worker threads; f must only write to slots it owns,
// which keeps results independent of the schedule.
template <class F>
void parallel_for(std::int64_t n, int jobs, F&& f) {
    if (jobs <= 1 || n < 2 * jobs) {
        for (std::int64_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(jobs));
    const std::int64_t chunk = (n + jobs - 1) / jobs;
    for (int w = 0; w < jobs; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([lo, hi, &f] {
            for (std::int64_t i = lo; i < hi; ++i) f(i);
        });
    }
    for (auto& t : workers) t.join();
}

}  // namespace bsheat
