#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lgs {

/// SplitMix64 finalizer. Used to expand seeds and to derive per-item seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Stateless mix of (seed, index) into an independent child seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// xoshiro256** generator with fully specified distributions.
///
/// Every draw is computed with integer arithmetic and IEEE float operations
/// only, so identical seeds give identical sequences on every platform. The
/// standard library distributions are deliberately avoided because their
/// algorithms are implementation-defined.
class Rng {
public:
    using State = std::array<std::uint64_t, 4>;

    Rng() : Rng(0) {}
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 24 bits of mantissa.
    float uniform();
    /// Uniform in [lo, hi).
    float uniform(float lo, float hi);
    /// Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    bool bernoulli(float p);

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(items[i - 1], items[j]);
        }
    }

    const State& state() const { return state_; }
    void set_state(const State& s) { state_ = s; }

    std::string state_hex() const;
    static State parse_state_hex(const std::string& text);

private:
    State state_{};
};

}  // namespace lgs
