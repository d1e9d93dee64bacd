#pragma once

#include <cstdint>
#include <cmath>

#include <Eigen/Dense>

namespace bvmlab {

// Splittable counter-based generator (splitmix64 core, Steele-Lea-Flood
// style splitting). Every stochastic operation in the library takes one of
// these by reference; identical seeds reproduce bit-identical streams.
class SplitRng {
public:
    explicit SplitRng(std::uint64_t seed)
        : state_(seed), gamma_(mix_gamma(seed + kGoldenGamma)), seed_(seed) {}

    std::uint64_t next_u64() {
        state_ += gamma_;
        return mix64(state_);
    }

    // Uniform on the open interval (0,1); safe under log().
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching: two uniforms per variate, so the stream
    // position is a pure function of the draw count.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    Eigen::VectorXd normal_vector(int k) {
        Eigen::VectorXd z(k);
        for (int i = 0; i < k; ++i) z[i] = normal();
        return z;
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    // Integer in [0, m).
    std::uint64_t next_below(std::uint64_t m) { return next_u64() % m; }

    // Sequential split: consumes two draws from this stream.
    SplitRng split() {
        const std::uint64_t s = next_u64();
        const std::uint64_t g = mix_gamma(next_u64());
        return SplitRng(s, g, s);
    }

    // Keyed fork: independent of call order and of other forks, so dropping
    // one replication never perturbs the rest.
    SplitRng fork(std::uint64_t a, std::uint64_t b = 0) const {
        const std::uint64_t s = mix64(seed_ ^ mix64(a + 0x9e3779b97f4a7c15ull));
        const std::uint64_t t = mix64(s ^ mix64(b + 0xbf58476d1ce4e5b9ull));
        return SplitRng(t, mix_gamma(mix64(t + kGoldenGamma)), t);
    }

    SplitRng fork(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
        return fork(a, b).fork(c, 0x94d049bb133111ebull);
    }

    std::uint64_t seed() const { return seed_; }

private:
    SplitRng(std::uint64_t state, std::uint64_t gamma, std::uint64_t seed)
        : state_(state), gamma_(gamma), seed_(seed) {}

    static constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ull;
    static constexpr double kPi = 3.14159265358979323846;

    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    // Gammas must be odd; also guard against too-regular bit patterns.
    static std::uint64_t mix_gamma(std::uint64_t z) {
        z = mix64(z) | 1ull;
        const int bit_flips = __builtin_popcountll(z ^ (z >> 1));
        if (bit_flips < 24) z ^= 0xaaaaaaaaaaaaaaaaull;
        return z | 1ull;
    }

    std::uint64_t state_;
    std::uint64_t gamma_;
    std::uint64_t seed_;
};

}  // namespace bvmlab
