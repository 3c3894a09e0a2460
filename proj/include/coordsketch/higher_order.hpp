#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "coordsketch/fsum.hpp"

namespace coordsketch {

/// Ordered k-tuples of distinct indices from [0, n) in lexicographic order.
class TupleIndexer {
public:
    TupleIndexer(std::size_t n, std::size_t k) : n_(n), k_(k) {
        if (k == 0) throw std::invalid_argument("tuple order must be at least 1");
        if (k > n) throw std::invalid_argument("tuple order k exceeds dimension n");
        // tail_[pos] = number of ways to fill positions pos+1..k-1
        tail_.assign(k, 1);
        for (std::size_t pos = k - 1; pos-- > 0;) tail_[pos] = tail_[pos + 1] * (n - pos - 1);
        count_ = tail_[0] * n;
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t k() const noexcept { return k_; }
    std::uint64_t count() const noexcept { return count_; }

    std::uint64_t rank(std::span<const std::size_t> tuple) const {
        std::uint64_t r = 0;
        for (std::size_t pos = 0; pos < k_; ++pos) {
            std::size_t smaller_unused = tuple[pos];
            for (std::size_t q = 0; q < pos; ++q)
                if (tuple[q] < tuple[pos]) --smaller_unused;
            r += smaller_unused * tail_[pos];
        }
        return r;
    }

    std::vector<std::size_t> unrank(std::uint64_t r) const {
        std::vector<std::size_t> out(k_);
        std::vector<bool> used(n_, false);
        for (std::size_t pos = 0; pos < k_; ++pos) {
            std::uint64_t skip = r / tail_[pos];
            r %= tail_[pos];
            for (std::size_t v = 0; v < n_; ++v) {
                if (used[v]) continue;
                if (skip-- == 0) {
                    out[pos] = v;
                    used[v] = true;
                    break;
                }
            }
        }
        return out;
    }

    /// Calls fn(rank, tuple) for every tuple in lexicographic order using O(n) memory.
    template <class Fn>
    void for_each(Fn&& fn) const {
        std::vector<std::size_t> tuple(k_);
        std::vector<bool> used(n_, false);
        std::uint64_t r = 0;
        // Depth-first fill; choose the smallest free value at each position.
        std::size_t pos = 0;
        std::vector<std::size_t> next(k_, 0);
        while (true) {
            if (pos == k_) {
                fn(r++, std::span<const std::size_t>(tuple));
                --pos;
                used[tuple[pos]] = false;
                next[pos] = tuple[pos] + 1;
                continue;
            }
            std::size_t v = next[pos];
            while (v < n_ && used[v]) ++v;
            if (v == n_) {
                if (pos == 0) return;
                next[pos] = 0;
                --pos;
                used[tuple[pos]] = false;
                next[pos] = tuple[pos] + 1;
                continue;
            }
            tuple[pos] = v;
            used[v] = true;
            ++pos;
            if (pos < k_) next[pos] = 0;
        }
    }

private:
    std::size_t n_, k_;
    std::vector<std::uint64_t> tail_;
    std::uint64_t count_ = 0;
};

/// A server's set W_j of nonnegative n-dimensional rows.
struct TupleServer {
    std::vector<std::vector<double>> rows;
};

using TupleFn = std::function<double(std::span<const double>)>;

/// w_t(j) = sum over rows v of W_j of g(v_{t_1}, ..., v_{t_k}).
inline double tuple_weight(const TupleServer& server, const TupleFn& g, std::span<const std::size_t> tuple) {
    double w = 0.0;
    std::vector<double> args(tuple.size());
    for (const auto& v : server.rows) {
        for (std::size_t q = 0; q < tuple.size(); ++q) args[q] = v[tuple[q]];
        w += g(args);
    }
    return w;
}

/// Largest number of tuple records any server held at once.
struct TupleMemoryMeter {
    std::atomic<std::size_t> peak{0};
    void observe(std::size_t records) {
        std::size_t cur = peak.load();
        while (records > cur && !peak.compare_exchange_weak(cur, records)) {
        }
    }
};

struct HocOptions {
    FsumOptions fsum{.backend = ExpBackend::NisanPrg};
    /// Above this many samples the reservoir is replaced by a second streaming
    /// pass drawing conditional binomials; memory is then the output set.
    std::size_t reservoir_cap = std::size_t{1} << 20;
};

namespace detail {

struct TupleSource {
    const TupleIndexer* indexer;
    const TupleFn* g;
    std::size_t reservoir_cap;
    TupleMemoryMeter* meter;

    Round1Message sample(const TupleServer& server, const FnSpec& fn, const ExpView& exps, double N,
                         std::uint64_t seed) const {
        Round1Message msg;
        auto scaled = [&](std::uint64_t r, std::span<const std::size_t> t) {
            double w = tuple_weight(server, *g, t);
            return w > 0.0 ? fn(w) / exps(r) : 0.0;
        };
        indexer->for_each([&](std::uint64_t r, std::span<const std::size_t> t) { msg.total += scaled(r, t); });
        if (msg.total == 0.0) return msg;

        Rng rng(seed);
        if (N <= static_cast<double>(reservoir_cap)) {
            struct Record {
                std::uint64_t rank;
                double value;
            };
            WeightedReservoir<Record> reservoir(static_cast<std::size_t>(N), rng);
            indexer->for_each([&](std::uint64_t r, std::span<const std::size_t> t) {
                double w = tuple_weight(server, *g, t);
                if (w > 0.0) reservoir.offer({r, w}, fn(w) / exps(r));
            });
            if (meter) meter->observe(reservoir.capacity() + 1);
            std::vector<Record> picked = reservoir.slots();
            std::sort(picked.begin(), picked.end(), [](auto& a, auto& b) { return a.rank < b.rank; });
            for (std::size_t t = 0; t < picked.size(); ++t) {
                if (t > 0 && picked[t].rank == picked[t - 1].rank) continue;
                msg.coords.push_back(picked[t].rank);
                msg.values.push_back(picked[t].value);
            }
            return msg;
        }

        double left = N, mass_left = msg.total;
        indexer->for_each([&](std::uint64_t r, std::span<const std::size_t> t) {
            if (left <= 0.0 || mass_left <= 0.0) return;
            double w = tuple_weight(server, *g, t);
            if (w <= 0.0) return;
            double v = fn(w) / exps(r);
            double p = std::min(1.0, v / mass_left);
            mass_left -= v;
            if (mass_left <= 1e-12 * msg.total) p = 1.0;
            double k = draw_binomial(rng, left, p);
            if (k > 0.0) {
                msg.coords.push_back(r);
                msg.values.push_back(w);
                left -= k;
            }
        });
        if (meter) meter->observe(msg.coords.size() + 1);
        return msg;
    }

    double value(const TupleServer& server, std::size_t rank) const {
        auto t = indexer->unrank(rank);
        return tuple_weight(server, *g, t);
    }
};

} // namespace detail

struct HocResult {
    double estimate = 0.0;
    CommStats stats;
    std::size_t copies = 0;
    std::uint64_t tuples = 0;
    ProtocolParams params;
    std::size_t peak_records = 0;
};

/// Estimates M = sum over tuples t of f(sum_j w_t(j)) without materializing
/// the n!/(n-k)! dimensional vectors w(j). Tuple exponentials come from the
/// small-seed generator, indexed by copy * tuples + rank.
inline HocResult higher_order_correlation(std::span<const TupleServer> servers, const FnSpec& fn, const TupleFn& g,
                                          std::size_t k, double eps, std::uint64_t seed, const HocOptions& opts = {},
                                          const CopyObserver* observer = nullptr) {
    if (servers.empty()) throw InvalidInstance("higher-order correlation needs at least one server");
    std::size_t n = 0;
    for (const auto& s : servers)
        for (const auto& row : s.rows) {
            if (n == 0) n = row.size();
            if (row.size() != n) throw InvalidInstance("rows differ in dimension");
            for (double v : row)
                if (!(v >= 0.0)) throw InvalidInstance("rows must be nonnegative");
        }
    if (n == 0) throw InvalidInstance("higher-order correlation needs at least one row");
    TupleIndexer indexer(n, k);
    detail::check_eps(eps, static_cast<std::size_t>(indexer.count()), opts.fsum);

    HocResult res;
    res.tuples = indexer.count();
    res.copies = detail::copies_for(eps);
    res.params = make_protocol_params(fn, static_cast<std::size_t>(indexer.count()), servers.size(), opts.fsum);
    double disc = opts.fsum.backend == ExpBackend::NisanPrg ? eps : 0.0;
    ExpStream exps(derive_seed(seed, {0xe2}), res.copies * indexer.count(), opts.fsum.precision_bits, disc,
                   opts.fsum.backend);
    TupleMemoryMeter meter;
    detail::TupleSource source{&indexer, &g, opts.reservoir_cap, &meter};
    std::vector<double> maxima(res.copies);
    for (std::size_t c = 0; c < res.copies; ++c) {
        detail::MaxRecoveryProtocol<detail::TupleSource, TupleServer> protocol(
            source, fn, ExpView{&exps, c * indexer.count()}, res.params, c, observer);
        auto [mr, stats] = run_coordinator_protocol(servers, protocol, seed);
        maxima[c] = mr.value;
        res.stats.absorb(stats);
    }
    if (std::all_of(maxima.begin(), maxima.end(), [](double v) { return v == 0.0; }))
        throw InvalidInstance("higher-order correlation: all tuple weights are zero");
    res.estimate = std::log(2.0) * detail::median(std::move(maxima));
    res.peak_records = meter.peak.load();
    return res;
}

/// Full enumeration of M(f, g, W_1, ..., W_s).
inline double higher_order_exact(std::span<const TupleServer> servers, const FnSpec& fn, const TupleFn& g,
                                 std::size_t k) {
    std::size_t n = 0;
    for (const auto& s : servers)
        if (!s.rows.empty()) n = s.rows.front().size();
    TupleIndexer indexer(n, k);
    double total = 0.0;
    indexer.for_each([&](std::uint64_t, std::span<const std::size_t> t) {
        double w = 0.0;
        for (const auto& s : servers) w += tuple_weight(s, g, t);
        total += fn(w);
    });
    return total;
}

} // namespace coordsketch
