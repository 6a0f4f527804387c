#include "acuity/util.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

namespace acuity {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path) {
    uint64_t s = root ^ 0xA0761D6478BD642Full;
    for (uint64_t p : path) {
        s ^= p + 0x9E3779B97F4A7C15ull;
        s = splitmix64(s);
    }
    // one extra scramble so short paths do not collide with the raw root
    return splitmix64(s);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: hi < lo");
    uint64_t span = uint64_t(hi - lo) + 1;
    // scale from 53 random bits; bias is negligible for the spans used here
    uint64_t r = next_u64() >> 11;
    return lo + int64_t((__uint128_t(r) * span) >> 53);
}

double Rng::normal() {
    // u1 in (0, 1] so the log is finite
    double u1 = (double((next_u64() >> 11)) + 1.0) * 0x1.0p-53;
    double u2 = double(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

int Rng::poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda > 500.0) lambda = 500.0;
    double limit = std::exp(-lambda);
    double prod = 1.0;
    int k = 0;
    do {
        prod *= uniform();
        if (prod <= limit) break;
        ++k;
    } while (k < 100000);
    return k;
}

uint64_t fnv1a64(const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xCBF29CE484222325ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string to_hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for digest: " + path);
    uint64_t h = 0xCBF29CE484222325ull;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof buf);
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
        throw DataError("invalid number '" + s + "' for " + what);
    return v;
}

long long parse_int(const std::string& s, const std::string& what) {
    long long v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
        throw DataError("invalid integer '" + s + "' for " + what);
    return v;
}

void parallel_chunks(int n, int n_chunks, int n_threads,
                     const std::function<void(int, int, int)>& fn) {
    if (n <= 0) return;
    if (n_chunks > n) n_chunks = n;
    if (n_chunks < 1) n_chunks = 1;
    auto chunk_begin = [&](int c) { return int(int64_t(c) * n / n_chunks); };

    if (n_threads <= 1 || n_chunks == 1) {
        for (int c = 0; c < n_chunks; ++c) fn(c, chunk_begin(c), chunk_begin(c + 1));
        return;
    }

    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            int c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                fn(c, chunk_begin(c), chunk_begin(c + 1));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    int workers = std::min(n_threads, n_chunks);
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace acuity
