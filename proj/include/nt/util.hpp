#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace nt {

// FNV-1a, used for dataset fingerprints and run ids.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Log verbosity from NT_LOG: 0 = errors only, 1 = progress (default), 2 = debug.
inline int log_level() {
    static const int level = [] {
        const char* env = std::getenv("NT_LOG");
        if (!env) return 1;
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == env || v < 0) return 1;
        return static_cast<int>(v > 2 ? 2 : v);
    }();
    return level;
}

inline void log_line(int level, const std::string& msg) {
    if (log_level() >= level) std::cerr << msg << "\n";
}

// Chunked parallel loop over [0, n). Results must not depend on the chunking;
// callers aggregate in index order after the join.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& body) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace nt
