#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace veinpipe {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename Seq>
inline std::string shape_to_string(const Seq& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    return os.str();
}

// splitmix64; used to derive independent per-item seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline double uniform_double(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in [lo, hi).
inline double uniform_range(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_double(rng);
}

// Bounded draw; modulo bias is irrelevant here, determinism is what matters.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return n ? rng() % n : 0;
}

// Box-Muller normal sampler with an explicit spare, so the draw sequence is
// fully pinned by this code rather than by the standard library.
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform_double(rng_);
        } while (u1 <= 0.0);
        const double u2 = uniform_double(rng_);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    Rng rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// In-place Fisher-Yates; std::shuffle's draw sequence is not pinned by the
// standard, this one is.
template <typename T>
inline void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

inline int& thread_count_ref() {
    static int count = 1;
    return count;
}

inline int thread_count() { return thread_count_ref(); }

inline void set_thread_count(int n) { thread_count_ref() = n < 1 ? 1 : n; }

// Chunked parallel map over [0, n). Each index is visited exactly once and
// writes disjoint outputs, so results do not depend on the thread count.
template <typename Fn>
inline void parallel_for(std::int64_t n, Fn&& fn) {
    const int threads = thread_count();
    if (threads <= 1 || n < 2) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

// Round half away from zero; the rounding used on every int32 -> int8 rescale.
inline std::int64_t round_half_away(double x) { return std::llround(x); }

}  // namespace veinpipe
