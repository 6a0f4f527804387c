#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace acuity {

inline constexpr const char* kToolVersion = "0.1.0";

// Bad configuration or command usage; CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent data at runtime; CLI maps this to exit code 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

uint64_t splitmix64(uint64_t& state);

// Derives an independent stream seed from a root seed and a path of indices,
// so per-patient / per-fold streams are stable under any parallel schedule.
uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path);

// mt19937_64 with hand-rolled uniform/normal draws. The standard library's
// distribution objects are implementation-defined, so all sampling here goes
// through raw 64-bit output to keep streams identical across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    static Rng derived(uint64_t root, std::initializer_list<uint64_t> path) {
        return Rng(derive_seed(root, path));
    }

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi);

    double normal();  // Box-Muller from raw bits

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    int poisson(double lambda);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(uniform_int(0, int64_t(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const std::string& s);
std::string to_hex(uint64_t v);
uint64_t file_digest(const std::string& path);

// Shortest round-trip decimal form of a double (std::to_chars).
std::string fmt_double(double v);
double parse_double(const std::string& s, const std::string& what);
long long parse_int(const std::string& s, const std::string& what);

// Runs fn(chunk, begin, end) over a fixed chunk decomposition of [0, n).
// The chunk layout depends only on n and n_chunks, never on n_threads, so
// per-chunk results can be reduced in chunk order for thread-count-invariant
// output.
void parallel_chunks(int n, int n_chunks, int n_threads,
                     const std::function<void(int, int, int)>& fn);

}  // namespace acuity
