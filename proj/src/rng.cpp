#include "lgs/rng.hpp"

#include <cstdio>

#include "lgs/errors.hpp"

namespace lgs {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    std::uint64_t t = a ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
    return splitmix64(t);
}

Rng::Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

float Rng::uniform() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
}

float Rng::uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw ContractError("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return lo + static_cast<std::int64_t>(r % span);
}

bool Rng::bernoulli(float p) { return uniform() < p; }

std::string Rng::state_hex() const {
    std::string out;
    char buf[17];
    for (auto w : state_) {
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(w));
        out += buf;
    }
    return out;
}

Rng::State Rng::parse_state_hex(const std::string& text) {
    if (text.size() != 64) throw FormatError("rng state must be 64 hex digits");
    State s{};
    for (int i = 0; i < 4; ++i) {
        std::uint64_t w = 0;
        for (int j = 0; j < 16; ++j) {
            char c = text[static_cast<std::size_t>(i * 16 + j)];
            int d;
            if (c >= '0' && c <= '9') d = c - '0';
            else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
            else throw FormatError("rng state: invalid hex digit");
            w = (w << 4) | static_cast<std::uint64_t>(d);
        }
        s[static_cast<std::size_t>(i)] = w;
    }
    return s;
}

}  // namespace lgs
