#pragma once

#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace backoff_lab {

/// Anything that hands out 16-bit random words, one per call.
template <typename T>
concept WordSource = requires(T& src) {
    { src.next_word() } -> std::convertible_to<std::uint16_t>;
};

/**
 * Seedable 64-bit generator exposed as a stream of 16-bit words.
 *
 * Each word is the low 16 bits of one mt19937_64 output, mirroring the
 * 16-bit hardware random register the backoff draw was designed around.
 * Sub-streams (per station, channel) are derived with a seed sequence so
 * they stay independent of the order in which they are created.
 */
class RandomWords {
public:
    explicit RandomWords(std::uint64_t seed) : engine_(seed) {}

    RandomWords(std::uint64_t seed, std::uint64_t stream)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        engine_.seed(seq);
    }

    std::uint16_t next_word() { return static_cast<std::uint16_t>(engine_() & 0xFFFFu); }

    /// Uniform real in [0, 1) from a full 64-bit output (channel-loss trials).
    double next_unit()
    {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace backoff_lab
