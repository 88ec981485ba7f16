#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace bnrm {

/// Philox4x32-10 counter-based bijection (Salmon et al., SC'11).
///
/// The generator is stateless apart from its counter: block b of a stream is
/// bijection({b_lo, b_hi, c2, c3}, key). Distinct (key, c2, c3) triples give
/// non-overlapping streams of 2^64 blocks each.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter bijection(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Identifies one independent substream: experiment seed, path index (< 2^32)
/// and a lane distinguishing the drivers of one path (market, claim i, ...).
struct StreamId {
    std::uint64_t seed = 0;
    std::uint64_t path = 0;
    std::uint32_t lane = 0;
};

namespace lanes {
inline constexpr std::uint32_t kMarket = 0;
/// Insurance driver / benefit randomness of claim i lives on lane kInsurance + i.
inline constexpr std::uint32_t kInsurance = 1;
}  // namespace lanes

/// Sequential view of a Philox substream: uniforms, normals, and a
/// UniformRandomBitGenerator interface for <random> distributions.
///
/// With `antithetic` set every draw is reflected (u -> 1-u, z -> -z, bits ->
/// ~bits) so that a stream and its antithetic twin consume identical counters.
class RandomStream {
public:
    using result_type = std::uint32_t;

    explicit RandomStream(const StreamId& id, bool antithetic = false) noexcept
        : key_{static_cast<std::uint32_t>(id.seed), static_cast<std::uint32_t>(id.seed >> 32)},
          path_word_(static_cast<std::uint32_t>(id.path)),
          lane_(id.lane),
          antithetic_(antithetic) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        const std::uint32_t w = next_word();
        return antithetic_ ? ~w : w;
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() noexcept {
        const std::uint64_t hi = next_word();
        const std::uint64_t lo = next_word();
        const std::uint64_t bits = ((hi << 32) | lo) >> 11;
        const double u = (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
        return antithetic_ ? 1.0 - u : u;
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const std::uint64_t h1 = next_word(), l1 = next_word();
        const std::uint64_t h2 = next_word(), l2 = next_word();
        const double u1 = (static_cast<double>(((h1 << 32) | l1) >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = (static_cast<double>(((h2 << 32) | l2) >> 11) + 0.5) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        double z0 = r * std::cos(angle);
        double z1 = r * std::sin(angle);
        if (antithetic_) {
            z0 = -z0;
            z1 = -z1;
        }
        spare_ = z1;
        has_spare_ = true;
        return z0;
    }

    std::uint64_t blocks_consumed() const noexcept { return block_; }

private:
    std::uint32_t next_word() noexcept {
        if (word_ == 4) {
            buffer_ = Philox4x32::bijection(
                {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32), path_word_, lane_},
                key_);
            ++block_;
            word_ = 0;
        }
        return buffer_[word_++];
    }

    Philox4x32::Key key_;
    std::uint32_t path_word_;
    std::uint32_t lane_;
    bool antithetic_;
    Philox4x32::Counter buffer_{};
    std::uint64_t block_ = 0;
    int word_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace bnrm
