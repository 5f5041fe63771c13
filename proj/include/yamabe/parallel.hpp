#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace yamabe {

struct Execution {
    unsigned threads = 1;
    bool deterministic = true;  // partial results combined in chunk order

    static Execution from_env() {
        Execution e;
        if (const char* s = std::getenv("YAMABE_THREADS")) {
            try {
                const long n = std::stol(s);
                if (n > 0) e.threads = static_cast<unsigned>(n);
            } catch (const std::exception&) {
            }
        }
        return e;
    }
};

inline Execution& default_execution() {
    static Execution e = Execution::from_env();
    return e;
}

// Split [0, n) into contiguous chunks; body(chunk_index, begin, end).
inline std::size_t chunk_count(std::size_t n, const Execution& ex) {
    return std::max<std::size_t>(1, std::min<std::size_t>(ex.threads, n));
}

inline void parallel_chunks(std::size_t n, const Execution& ex,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
    const std::size_t c = chunk_count(n, ex);
    if (c == 1) {
        body(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < c; ++k) {
        const std::size_t b = n * k / c, e = n * (k + 1) / c;
        pool.emplace_back([&body, k, b, e] { body(k, b, e); });
    }
    for (auto& t : pool) t.join();
}

// Sum of f(i) over [0, n). Deterministic mode fixes the association order independently of the thread count.
template <class F>
double parallel_sum(std::size_t n, const Execution& ex, F&& f) {
    if (ex.deterministic || ex.threads <= 1) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += f(i);
        return s;
    }
    double total = 0;
    std::mutex mu;
    parallel_chunks(n, ex, [&](std::size_t, std::size_t b, std::size_t e) {
        double s = 0;
        for (std::size_t i = b; i < e; ++i) s += f(i);
        std::lock_guard<std::mutex> lock(mu);
        total += s;
    });
    return total;
}

}  // namespace yamabe
