#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace bnrm {

// Rows are paths, columns are grid times.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown: singular systems, non-finite intermediate values.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (parameters, grids, experiment blocks).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation's precondition contract.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Bad simulated or user-supplied data; carries the offending path indices.
class DataError : public Error {
public:
    DataError(const std::string& what, std::vector<std::size_t> paths)
        : Error(what + describe(paths)), paths_(std::move(paths)) {}

    const std::vector<std::size_t>& paths() const noexcept { return paths_; }

private:
    static std::string describe(const std::vector<std::size_t>& paths) {
        std::string s = " (offending paths:";
        const std::size_t shown = std::min<std::size_t>(paths.size(), 10);
        for (std::size_t i = 0; i < shown; ++i) s += " " + std::to_string(paths[i]);
        if (paths.size() > shown) s += " ... " + std::to_string(paths.size()) + " total";
        return s + ")";
    }

    std::vector<std::size_t> paths_;
};

/// A self-financing strategy produced negative wealth.
class PermissibilityError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Monte Carlo estimate with its standard error.
struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

/// Pairwise (cascade) summation; the result depends only on the input order.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t kBlock = 64;
    if (xs.size() <= kBlock) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

/// Sample mean and standard error of the mean (two-pass, pairwise sums).
inline Estimate mean_and_se(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
    const double mean = pairwise_sum(xs) / static_cast<double>(n);
    if (n == 1) return {mean, 0.0};
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = xs[i] - mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

/// Averages consecutive pairs (antithetic partners) before estimating.
inline Estimate pair_averaged_mean_and_se(std::span<const double> xs) {
    std::vector<double> pairs(xs.size() / 2);
    for (std::size_t j = 0; j < pairs.size(); ++j) pairs[j] = 0.5 * (xs[2 * j] + xs[2 * j + 1]);
    return mean_and_se(pairs);
}

/// |a - b| measured in units of the combined standard error.
inline double combined_z(const Estimate& a, const Estimate& b) {
    const double se = std::hypot(a.se, b.se);
    const double diff = std::abs(a.value - b.value);
    if (se == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return diff / se;
}

/// Ordinary least-squares slope of y on x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

inline unsigned resolve_threads(unsigned requested) {
    if (requested != 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Work items must
/// write only to their own output slots; results are then independent of the
/// thread count.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1));
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, w, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace bnrm
