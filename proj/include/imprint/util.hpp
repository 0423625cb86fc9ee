#pragma once

#include <cstdint>
#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace imprint {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// splitmix64 finalizer; used to derive independent RNG streams from a run seed.
std::uint64_t mix64(std::uint64_t x);

/// Stream seed for sub-task `index` of a run seeded with `seed` (seed ⊕ index, then mixed).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) { return mix64(seed ^ index); }

/// mt19937_64 with distribution code that does not depend on the standard
/// library's implementation-defined distributions, so generated data is
/// bit-identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    std::size_t below(std::size_t n); ///< uniform integer in [0, n)

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Shortest decimal representation that round-trips.
std::string format_double(double v);
/// Fixed-point with `digits` decimals.
std::string format_fixed(double v, int digits);

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(std::span<const std::string> parts, std::string_view sep);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view content);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_std(std::span<const double> v);
double median(std::vector<double> v);

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). Callers write results by index so output order never
/// depends on scheduling; body must not throw.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
    const auto hw = std::max(1u, std::thread::hardware_concurrency());
    const auto workers = std::min<std::size_t>(n, threads > 0 ? static_cast<std::size_t>(threads) : hw);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (auto i = next++; i < n; i = next++) body(i);
        });
    for (auto& t : pool) t.join();
}

} // namespace imprint
