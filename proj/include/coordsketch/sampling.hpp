#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "coordsketch/random.hpp"

namespace coordsketch {

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
    return Rng(derive_seed(seed, path));
}

/// Binomial(trials, p) for trial counts that may exceed 2^63.
///
/// Small means use the exact std sampler (or Poisson when the trial count is
/// astronomically large); large means use the normal approximation, whose
/// error is far below the resolution any caller can observe.
inline double draw_binomial(Rng& rng, double trials, double p) {
    if (trials <= 0.0 || p <= 0.0) return 0.0;
    if (p >= 1.0) return trials;
    double mean = trials * p;
    double tail = trials * (1.0 - p);
    constexpr double kSmall = 30.0;
    constexpr double kExact = 0x1.0p52;
    if (mean < kSmall || tail < kSmall) {
        bool flip = tail < mean;
        double q = flip ? 1.0 - p : p;
        double m = flip ? tail : mean;
        double k;
        if (trials <= kExact)
            k = static_cast<double>(std::binomial_distribution<std::int64_t>(static_cast<std::int64_t>(trials), q)(rng));
        else
            k = static_cast<double>(std::poisson_distribution<std::int64_t>(m)(rng));
        k = std::min(k, trials);
        return flip ? trials - k : k;
    }
    double z = std::normal_distribution<double>(0.0, 1.0)(rng);
    double k = std::round(mean + z * std::sqrt(mean * (1.0 - p)));
    return std::clamp(k, 0.0, trials);
}

/// Multinomial(trials, weights / sum) via sequential conditional binomials.
/// Returns only the (index, count) pairs with a positive count.
inline std::vector<std::pair<std::size_t, double>> draw_multinomial(Rng& rng, std::span<const double> weights,
                                                                      double trials) {
    std::vector<std::pair<std::size_t, double>> out;
    std::vector<double> suffix(weights.size() + 1, 0.0);
    for (std::size_t i = weights.size(); i-- > 0;) suffix[i] = suffix[i + 1] + weights[i];
    double left = trials;
    for (std::size_t i = 0; i < weights.size() && left > 0.0; ++i) {
        if (weights[i] <= 0.0) continue;
        double p = suffix[i] > 0.0 ? std::min(1.0, weights[i] / suffix[i]) : 1.0;
        if (suffix[i + 1] <= 0.0) p = 1.0;
        double k = draw_binomial(rng, left, p);
        if (k > 0.0) {
            out.emplace_back(i, k);
            left -= k;
        }
    }
    return out;
}

/// Weighted sampling with replacement over a stream, N slots of memory.
///
/// Every slot is an independent size-one weighted reservoir: when an item of
/// weight w arrives after total weight W, each slot switches to it with
/// probability w/W. The switching slots are found with geometric skips, so an
/// item costs O(1 + switched slots).
template <class Item>
class WeightedReservoir {
public:
    WeightedReservoir(std::size_t slots, Rng& rng) : rng_(rng) { slots_.reserve(slots); capacity_ = slots; }

    void offer(const Item& item, double weight) {
        if (weight <= 0.0) return;
        total_ += weight;
        if (slots_.empty()) {
            slots_.assign(capacity_, item);
            return;
        }
        double p = weight / total_;
        if (p >= 1.0) {
            std::fill(slots_.begin(), slots_.end(), item);
            return;
        }
        double log_q = std::log1p(-p);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        double pos = -1.0;
        for (;;) {
            double u = 1.0 - unit(rng_);
            pos += 1.0 + std::floor(std::log(u) / log_q);
            if (pos >= static_cast<double>(slots_.size())) break;
            slots_[static_cast<std::size_t>(pos)] = item;
        }
    }

    const std::vector<Item>& slots() const noexcept { return slots_; }
    double total_weight() const noexcept { return total_; }
    std::size_t capacity() const noexcept { return capacity_; }

private:
    Rng& rng_;
    std::size_t capacity_;
    std::vector<Item> slots_;
    double total_ = 0.0;
};

} // namespace coordsketch
