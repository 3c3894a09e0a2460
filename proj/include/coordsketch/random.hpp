#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coordsketch {

//! SplitMix64 finalizer; a bijection on 64-bit words with full avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

//! Counter-mode PRF keyed by a seed.
constexpr std::uint64_t prf64(std::uint64_t seed, std::uint64_t counter) noexcept {
    return mix64(mix64(seed) ^ mix64(counter * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

//! Derives an independent child seed from a parent seed and a path of tags.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t tag : path) h = prf64(h, tag);
    return h;
}

//! Converts the top 53 bits of a word to a double in [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Hash of an opaque byte string into [0,1) with 53 bits of resolution.
/// Different (salt, index) pairs behave as independent hash functions.
inline double uniform_hash(std::string_view key, std::uint64_t salt, std::uint64_t index) noexcept {
    std::uint64_t h = prf64(salt, index) ^ (0x9ae16a3b2f90404fULL * (key.size() + 1));
    std::size_t pos = 0;
    while (pos + 8 <= key.size()) {
        std::uint64_t chunk;
        std::memcpy(&chunk, key.data() + pos, 8);
        h = mix64(h ^ chunk);
        pos += 8;
    }
    if (pos < key.size()) {
        std::uint64_t chunk = 0;
        std::memcpy(&chunk, key.data() + pos, key.size() - pos);
        h = mix64(h ^ chunk ^ 0xff51afd7ed558ccdULL);
    }
    return to_unit(mix64(h));
}

/// One member h_i of a salted family of hash functions.
struct KeyHash {
    std::uint64_t salt = 0;
    std::uint64_t index = 1;

    double operator()(std::string_view key) const noexcept { return uniform_hash(key, salt, index); }
};

/// Nisan's generator over the Mersenne field GF(2^61 - 1).
///
/// The seed holds a start block x and one pairwise-independent hash
/// h_l(y) = a_l*y + c_l per level. Block i is obtained by walking the bits of
/// i from the most significant level down, applying h_l whenever bit l-1 is
/// set, so every block is computable in O(levels) time without state.
class NisanPrg {
public:
    static constexpr unsigned kFieldBits = 61;
    static constexpr std::uint64_t kPrime = (std::uint64_t{1} << kFieldBits) - 1;

    static unsigned levels_for(std::uint64_t num_blocks) {
        unsigned levels = 1;
        while (levels < 64 && (std::uint64_t{1} << levels) < num_blocks) ++levels;
        return levels;
    }

    static std::size_t required_seed_bytes(std::uint64_t num_blocks) {
        return 8 * (1 + 2 * static_cast<std::size_t>(levels_for(num_blocks)));
    }

    NisanPrg(std::span<const std::uint8_t> seed, std::uint64_t num_blocks, unsigned block_len)
        : num_blocks_(num_blocks), block_len_(block_len), levels_(levels_for(num_blocks)) {
        if (num_blocks == 0) throw std::invalid_argument("nisan: stream must have at least one block");
        if (block_len < 1 || block_len > kFieldBits)
            throw std::invalid_argument("nisan: block length must be in [1, 61] bits");
        if (seed.size() < required_seed_bytes(num_blocks))
            throw std::invalid_argument("nisan: seed too short for " + std::to_string(num_blocks) + " blocks");
        auto word = [&](std::size_t w) {
            std::uint64_t v = 0;
            for (int b = 7; b >= 0; --b) v = (v << 8) | seed[8 * w + static_cast<std::size_t>(b)];
            return v % kPrime;
        };
        start_ = word(0);
        mult_.resize(levels_);
        add_.resize(levels_);
        for (unsigned l = 0; l < levels_; ++l) {
            mult_[l] = word(1 + 2 * l);
            add_[l] = word(2 + 2 * l);
        }
    }

    /// Expands a 64-bit seed into a full generator seed (little-endian words).
    static NisanPrg from_seed(std::uint64_t seed, std::uint64_t num_blocks, unsigned block_len) {
        std::vector<std::uint8_t> bytes(required_seed_bytes(num_blocks));
        for (std::size_t w = 0; w < bytes.size() / 8; ++w) {
            std::uint64_t v = prf64(seed, w);
            for (int b = 0; b < 8; ++b) bytes[8 * w + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(v >> (8 * b));
        }
        return NisanPrg(bytes, num_blocks, block_len);
    }

    std::uint64_t block(std::uint64_t index) const {
        if (index >= num_blocks_)
            throw std::out_of_range("nisan: block " + std::to_string(index) + " beyond stream length " +
                                    std::to_string(num_blocks_));
        std::uint64_t y = start_;
        for (unsigned l = levels_; l-- > 0;)
            if ((index >> l) & 1U) y = add_mod(mul_mod(mult_[l], y), add_[l]);
        return y >> (kFieldBits - block_len_);
    }

    std::uint64_t num_blocks() const noexcept { return num_blocks_; }
    unsigned block_len() const noexcept { return block_len_; }
    unsigned levels() const noexcept { return levels_; }
    std::size_t seed_bits() const noexcept { return 8 * required_seed_bytes(num_blocks_); }

private:
    static std::uint64_t mul_mod(std::uint64_t a, std::uint64_t b) noexcept {
        unsigned __int128 prod = static_cast<unsigned __int128>(a) * b;
        std::uint64_t lo = static_cast<std::uint64_t>(prod) & kPrime;
        std::uint64_t hi = static_cast<std::uint64_t>(prod >> kFieldBits);
        std::uint64_t r = lo + hi;
        return r >= kPrime ? r - kPrime : r;
    }
    static std::uint64_t add_mod(std::uint64_t a, std::uint64_t b) noexcept {
        std::uint64_t r = a + b;
        return r >= kPrime ? r - kPrime : r;
    }

    std::uint64_t num_blocks_;
    unsigned block_len_;
    unsigned levels_;
    std::uint64_t start_ = 0;
    std::vector<std::uint64_t> mult_, add_;
};

enum class ExpBackend { FullRandom, NisanPrg };

/// Random-access stream of shared standard exponential variates.
///
/// Variate i is -ln((r_i + 1/2) / 2^b) for a b-bit integer r_i drawn from the
/// backend, optionally rounded down to the grid {(1 + eps/4)^z : z integer}.
class ExpStream {
public:
    ExpStream(std::uint64_t seed, std::uint64_t count, unsigned precision_bits = 48,
              double discretization_eps = 0.0, ExpBackend backend = ExpBackend::FullRandom)
        : seed_(seed), count_(count), bits_(precision_bits), disc_eps_(discretization_eps), backend_(backend) {
        validate();
        if (backend == ExpBackend::NisanPrg) prg_.emplace(NisanPrg::from_seed(seed, count, precision_bits));
    }

    /// Stream backed by an explicitly seeded generator; one block per variate.
    ExpStream(NisanPrg prg, double discretization_eps)
        : seed_(0), count_(prg.num_blocks()), bits_(prg.block_len()), disc_eps_(discretization_eps),
          backend_(ExpBackend::NisanPrg), prg_(std::move(prg)) {
        validate();
    }

    /// The precision_bits-bit integer underlying variate i.
    std::uint64_t raw(std::uint64_t i) const {
        if (i >= count_) throw std::out_of_range("exp stream: index " + std::to_string(i) + " out of range");
        if (prg_) return prg_->block(i);
        return bits_ == 64 ? prf64(seed_, i) : prf64(seed_, i) >> (64 - bits_);
    }

    double variate(std::uint64_t i) const {
        double u = (static_cast<double>(raw(i)) + 0.5) * std::ldexp(1.0, -static_cast<int>(bits_));
        double e = -std::log(u);
        if (disc_eps_ > 0.0) {
            double z = std::floor(std::log(e) / log_ratio_);
            e = std::exp(z * log_ratio_);
        }
        return e;
    }

    double operator()(std::uint64_t i) const { return variate(i); }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t count() const noexcept { return count_; }
    unsigned precision_bits() const noexcept { return bits_; }
    double discretization_eps() const noexcept { return disc_eps_; }
    ExpBackend backend() const noexcept { return backend_; }

private:
    void validate() {
        if (count_ == 0) throw std::invalid_argument("exp stream: count must be positive");
        if (bits_ < 32) throw std::invalid_argument("exp stream: precision_bits must be at least 32");
        unsigned max_bits = backend_ == ExpBackend::NisanPrg ? NisanPrg::kFieldBits : 64U;
        if (bits_ > max_bits)
            throw std::invalid_argument("exp stream: precision_bits above " + std::to_string(max_bits));
        if (disc_eps_ < 0.0 || disc_eps_ >= 4.0)
            throw std::invalid_argument("exp stream: discretization eps must be in [0, 4)");
        log_ratio_ = std::log1p(disc_eps_ / 4.0);
    }

    std::uint64_t seed_;
    std::uint64_t count_;
    unsigned bits_;
    double disc_eps_;
    ExpBackend backend_;
    double log_ratio_ = 0.0;
    std::optional<NisanPrg> prg_;
};

inline ExpStream gen_exponentials(std::uint64_t seed, std::uint64_t count, unsigned precision_bits) {
    return ExpStream(seed, count, precision_bits);
}

/// A window [offset, offset + n) of a stream, used for one independent copy.
struct ExpView {
    const ExpStream* stream = nullptr;
    std::uint64_t offset = 0;

    double operator()(std::uint64_t i) const { return stream->variate(offset + i); }
};

} // namespace coordsketch
