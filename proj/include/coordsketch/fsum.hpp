#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "coordsketch/comm.hpp"
#include "coordsketch/fn_spec.hpp"
#include "coordsketch/random.hpp"
#include "coordsketch/sampling.hpp"

namespace coordsketch {

struct FsumOptions {
    double sample_const = 1.0; // hidden constant in the per-server sample count N
    double heavy_const = 4.0;  // C in C ln^2 n
    unsigned precision_bits = 48;
    ExpBackend backend = ExpBackend::FullRandom;
    /// Smallest admissible eps is n^-eps_floor_power.
    double eps_floor_power = 0.5;
};

/// Constants of one max-recovery instance; derived from (f, n, s) only.
struct ProtocolParams {
    std::size_t n = 0;
    std::size_t s = 0;
    double log_n = 0.0;
    double N = 0.0; // samples per server; may exceed 2^64
    std::size_t A = 0, B = 0;
    double heavy_const = 4.0;
    double sqrt_theta = 0.0;
    double p_start = 0.0;
    double f_start_factor = 0.0; // F_start = factor * sum_j total_j
    double large_threshold = 0.0;
    double exact_threshold = 0.0; // buckets whose top edge exceeds this are credited exactly
    double mark_threshold = 0.0;  // servers needed to mark a bucket "probably good"
    std::size_t pl_size = 0;
};

inline ProtocolParams make_protocol_params(const FnSpec& fn, std::size_t n, std::size_t s,
                                           const FsumOptions& opts = {}) {
    if (n == 0 || s == 0) throw InvalidInstance("protocol needs n >= 1 and s >= 1");
    ProtocolParams pp;
    pp.n = n;
    pp.s = s;
    pp.heavy_const = opts.heavy_const;
    pp.log_n = std::log(static_cast<double>(std::max<std::size_t>(n, 2)));
    const double L = pp.log_n;
    const double C = opts.heavy_const;
    const double sd = static_cast<double>(s);
    const double cf_s = cf_bound(fn, sd);
    const double e1 = fn.eps1();
    const double one_minus_e2 = 1.0 - fn.eps2();
    const double log_theta = std::log(fn.theta);

    pp.A = static_cast<std::size_t>(std::max(1.0, std::ceil(std::log(sd / e1) / log_theta)));
    pp.B = static_cast<std::size_t>(std::max(1.0, std::ceil(std::log(sd * sd / (e1 * one_minus_e2)) / log_theta)));
    const double ab = static_cast<double>(pp.A * pp.B);
    pp.sqrt_theta = std::sqrt(fn.theta);

    double main_term = (cf_s / sd) * cf_bound(fn, ab) * ab * pp.sqrt_theta * std::pow(L, 4.0) /
                       (e1 * one_minus_e2 * one_minus_e2);
    double capture_term = 32.0 * C * std::pow(L, 3.0) * cf_s / sd;
    double large_term = cf_s * std::pow(L, 3.0) / sd;
    pp.N = std::max(1.0, std::ceil(opts.sample_const * std::max({main_term, capture_term, large_term})));

    pp.p_start = e1 / (cf_s * C * L * L);
    pp.f_start_factor = e1 * one_minus_e2 / (4.0 * C * sd * sd);
    pp.large_threshold = 4.0 * sd / (cf_s * L * L);
    pp.exact_threshold = 4.0 * L / pp.N;
    pp.mark_threshold = 66.0 * L;
    double pl = std::ceil(C * L * L * fn.theta_dblprime / std::pow(one_minus_e2, 3.0));
    pp.pl_size = pl >= 0x1.0p63 ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(pl);
    return pp;
}

/// A server's first-round message: sampled coordinates, their values, and
/// the server's total sum_i f(x_i(j)) / e_i.
struct Round1Message {
    std::vector<std::size_t> coords;
    std::vector<double> values;
    double total = 0.0;

    std::uint64_t words() const {
        if (total == 0.0 && coords.empty()) return 0;
        return coords.size() * words::kIndexValuePair + words::kReal;
    }
};

/// Draws N coordinates with replacement from i -> f(x_i)/e_i and keeps the
/// distinct ones. Only membership matters, so the multinomial is drawn as
/// sequential conditional binomials.
inline Round1Message round1_server_sample(std::span<const double> x, const FnSpec& fn, const ExpView& exps, double N,
                                          std::uint64_t seed) {
    if (!(N >= 1.0)) throw std::invalid_argument("round 1: N must be at least 1");
    Round1Message msg;
    std::vector<double> weight(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) {
            weight[i] = fn(x[i]) / exps(i);
            msg.total += weight[i];
        }
    }
    if (msg.total == 0.0) return msg;
    Rng rng(seed);
    for (auto [i, count] : draw_multinomial(rng, weight, N)) {
        msg.coords.push_back(i);
        msg.values.push_back(x[i]);
    }
    return msg;
}

struct CoordinatorView {
    std::vector<Round1Message> messages;
};

/// Per-coordinate estimates for the sampled coordinates SC (ascending).
struct XhatEstimate {
    std::vector<std::size_t> coords;
    std::vector<double> xhat;
    std::vector<double> est;
};

/// Lower estimates x_hat_i of x_i from first-round messages alone.
///
/// Server j's contribution to coordinate i is credited exactly when its share
/// q_i(j) of the server's total is large, dropped when it is below P_start or
/// when the server's total is below F_start, and otherwise placed in the
/// (a, b) grid cell with q in [r^a, r^{a+1}) P_start and total in
/// [r^b, r^{b+1}) F_start, r = sqrt(theta). Cells likely to be sampled by all
/// their members are credited exactly; the rest are credited from their
/// member count only when it is large enough to concentrate.
inline XhatEstimate estimate_xhat(const CoordinatorView& view, const FnSpec& fn, const ProtocolParams& pp,
                                  const ExpView& exps) {
    struct Contribution {
        std::size_t coord;
        double x;
        double total;
    };
    double grand_total = 0.0;
    std::vector<Contribution> all;
    for (const auto& msg : view.messages) {
        grand_total += msg.total;
        for (std::size_t t = 0; t < msg.coords.size(); ++t) all.push_back({msg.coords[t], msg.values[t], msg.total});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.coord < b.coord; });

    const double f_start = pp.f_start_factor * grand_total;
    const double log_r = std::log(pp.sqrt_theta);
    XhatEstimate out;
    std::vector<std::pair<std::pair<long, long>, int>> cells;
    for (std::size_t lo = 0; lo < all.size();) {
        std::size_t hi = lo;
        while (hi < all.size() && all[hi].coord == all[lo].coord) ++hi;
        const std::size_t i = all[lo].coord;
        const double e = exps(i);
        double xhat = 0.0;
        cells.clear();
        for (std::size_t t = lo; t < hi; ++t) {
            const auto& c = all[t];
            double q = fn(c.x) / e / c.total;
            if (q > pp.large_threshold) {
                xhat += c.x;
                continue;
            }
            if (q < pp.p_start || c.total < f_start) continue;
            long a = static_cast<long>(std::floor(std::log(q / pp.p_start) / log_r));
            long b = static_cast<long>(std::floor(std::log(c.total / f_start) / log_r));
            if (std::pow(pp.sqrt_theta, static_cast<double>(a + 1)) * pp.p_start > pp.exact_threshold) {
                xhat += c.x;
                continue;
            }
            auto it = std::find_if(cells.begin(), cells.end(), [&](const auto& cell) { return cell.first == std::pair{a, b}; });
            if (it == cells.end())
                cells.push_back({{a, b}, 1});
            else
                ++it->second;
        }
        for (const auto& [ab, members] : cells) {
            if (members < pp.mark_threshold) continue;
            double top = std::pow(pp.sqrt_theta, static_cast<double>(ab.first + 1)) * pp.p_start;
            double hit = -std::expm1(pp.N * std::log1p(-top));
            double level = e * std::pow(pp.sqrt_theta, static_cast<double>(ab.first + ab.second)) * pp.p_start * f_start;
            xhat += 0.4 * members / hit * fn.f_inv(level);
        }
        out.coords.push_back(i);
        out.xhat.push_back(xhat);
        out.est.push_back(fn(xhat) / e);
        lo = hi;
    }
    return out;
}

/// Coordinates with the `limit` largest estimates, ascending by index.
inline std::vector<std::size_t> select_candidates(const XhatEstimate& est, std::size_t limit) {
    std::vector<std::size_t> order(est.coords.size());
    std::iota(order.begin(), order.end(), 0);
    if (limit < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(limit), order.end(),
                         [&](std::size_t a, std::size_t b) {
                             return est.est[a] != est.est[b] ? est.est[a] > est.est[b] : a < b;
                         });
        order.resize(limit);
    }
    std::vector<std::size_t> out;
    out.reserve(order.size());
    for (auto pos : order) out.push_back(est.coords[pos]);
    std::sort(out.begin(), out.end());
    return out;
}

/// Hook for inspecting each max-recovery instance (diagnostics and tests).
struct CopyTrace {
    std::size_t copy = 0;
    const CoordinatorView* view = nullptr;
    const XhatEstimate* estimate = nullptr;
    const std::vector<std::size_t>* candidates = nullptr;
    double value = 0.0;
    std::size_t argmax = 0;
};
using CopyObserver = std::function<void(const CopyTrace&)>;

struct MaxRecovery {
    double value = 0.0;
    std::size_t argmax = 0;
};

namespace detail {

struct FsumUp {
    Round1Message sample;    // round 1
    std::vector<double> values; // round 2, aligned with the candidate list

    std::uint64_t words() const { return sample.words() + values.size() * words::kReal; }
};

struct CandidateList {
    std::vector<std::size_t> coords;
    std::uint64_t words() const { return coords.size() * words::kIndex; }
};

/// Server-side access to a dense share x(j).
struct DenseSource {
    Round1Message sample(const ServerVector& sv, const FnSpec& fn, const ExpView& exps, double N,
                         std::uint64_t seed) const {
        return round1_server_sample(sv.entries, fn, exps, N, seed);
    }
    double value(const ServerVector& sv, std::size_t i) const { return sv.entries[i]; }
};

template <class Source, class Input>
class MaxRecoveryProtocol {
public:
    using Up = FsumUp;
    using Down = CandidateList;
    using Output = MaxRecovery;

    MaxRecoveryProtocol(Source source, const FnSpec& fn, const ExpView& exps, const ProtocolParams& pp,
                        std::size_t copy, const CopyObserver* observer)
        : source_(std::move(source)), fn_(&fn), exps_(exps), pp_(&pp), copy_(copy), observer_(observer) {}

    struct Logic {
        Source source;
        const FnSpec* fn;
        ExpView exps;
        double N;
        std::size_t copy;

        FsumUp operator()(int round, const ServerContext<Input>& ctx, const CandidateList* down) const {
            FsumUp up;
            if (round == 1) {
                up.sample = source.sample(ctx.data, *fn, exps, N, derive_seed(ctx.seed, {0x51, copy, ctx.id}));
            } else {
                up.values.reserve(down->coords.size());
                for (auto i : down->coords) up.values.push_back(source.value(ctx.data, i));
            }
            return up;
        }
    };

    Logic server_logic() const { return Logic{source_, fn_, exps_, pp_->N, copy_}; }
    int round_budget() const { return 2; }

    std::variant<std::vector<Down>, Output> coordinate(int round, std::vector<Up> ups) {
        if (round == 1) {
            view_.messages.clear();
            for (auto& up : ups) view_.messages.push_back(std::move(up.sample));
            estimate_ = estimate_xhat(view_, *fn_, *pp_, exps_);
            candidates_.coords = select_candidates(estimate_, pp_->pl_size);
            return std::vector<Down>(ups.size(), candidates_);
        }
        MaxRecovery best;
        for (std::size_t t = 0; t < candidates_.coords.size(); ++t) {
            double x = 0.0;
            for (const auto& up : ups) x += up.values[t];
            std::size_t i = candidates_.coords[t];
            double v = (*fn_)(x) / exps_(i);
            if (v > best.value) best = {v, i};
        }
        if (observer_ && *observer_)
            (*observer_)(CopyTrace{copy_, &view_, &estimate_, &candidates_.coords, best.value, best.argmax});
        return best;
    }

private:
    Source source_;
    const FnSpec* fn_;
    ExpView exps_;
    const ProtocolParams* pp_;
    std::size_t copy_;
    const CopyObserver* observer_;
    CoordinatorView view_;
    XhatEstimate estimate_;
    CandidateList candidates_;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of nothing");
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double hi = *mid;
    if (v.size() % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

inline std::size_t copies_for(double eps) { return static_cast<std::size_t>(std::ceil(16.0 / (eps * eps))); }

inline void check_eps(double eps, std::size_t n, const FsumOptions& opts) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("eps out of range (0, 1)");
    double floor = std::pow(static_cast<double>(n), -opts.eps_floor_power);
    if (eps < floor)
        throw std::invalid_argument("eps " + std::to_string(eps) + " below n^-" + std::to_string(opts.eps_floor_power) +
                                    " = " + std::to_string(floor));
}

} // namespace detail

/// Two-round recovery of max_i f(x_i)/e_i for one copy of the exponentials.
inline std::pair<MaxRecovery, CommStats> recover_max(std::span<const ServerVector> servers, const FnSpec& fn,
                                                     const ExpView& exps, const ProtocolParams& pp, std::uint64_t seed,
                                                     std::size_t copy = 0, const CopyObserver* observer = nullptr) {
    detail::MaxRecoveryProtocol<detail::DenseSource, ServerVector> protocol({}, fn, exps, pp, copy, observer);
    return run_coordinator_protocol(servers, protocol, seed);
}

/// Direct evaluation of sum_i f(sum_j x_i(j)).
inline double fsum_exact(std::span<const ServerVector> servers, const FnSpec& fn) {
    std::size_t n = validate_servers(servers);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double x = 0.0;
        for (const auto& sv : servers) x += sv.entries[i];
        total += fn(x);
    }
    return total;
}

struct FsumResult {
    double estimate = 0.0;
    CommStats stats;
    std::size_t copies = 0;
    ProtocolParams params;
};

/// Estimates sum_i f(x_i) for x = sum_j x(j) within 1 +- eps in two rounds.
///
/// m = ceil(16/eps^2) copies of the exponentials run side by side; their
/// messages share the same two rounds, so their word counts add per round.
/// The estimate is ln 2 times the median of the recovered maxima.
inline FsumResult fsum_estimate(std::span<const ServerVector> servers, const FnSpec& fn, double eps,
                                std::uint64_t seed, const FsumOptions& opts = {},
                                const CopyObserver* observer = nullptr) {
    std::size_t n = validate_servers(servers);
    detail::check_eps(eps, n, opts);
    if (fsum_exact(servers, fn) == 0.0) throw InvalidInstance("fsum: all-zero input");
    FsumResult res;
    res.copies = detail::copies_for(eps);
    res.params = make_protocol_params(fn, n, servers.size(), opts);
    double disc = opts.backend == ExpBackend::NisanPrg ? eps : 0.0;
    ExpStream exps(derive_seed(seed, {0xe1}), static_cast<std::uint64_t>(res.copies) * n, opts.precision_bits, disc,
                   opts.backend);
    std::vector<double> maxima(res.copies);
    for (std::size_t c = 0; c < res.copies; ++c) {
        auto [mr, stats] = recover_max(servers, fn, ExpView{&exps, c * n}, res.params, seed, c, observer);
        maxima[c] = mr.value;
        res.stats.absorb(stats);
    }
    res.estimate = std::log(2.0) * detail::median(std::move(maxima));
    return res;
}

/// F_k = sum_i x_i^k.
inline FsumResult fk_estimate(std::span<const ServerVector> servers, double k, double eps, std::uint64_t seed,
                              const FsumOptions& opts = {}, const CopyObserver* observer = nullptr) {
    if (!(k >= 1.0)) throw std::invalid_argument("fk: k must be at least 1");
    return fsum_estimate(servers, power_fn(k), eps, seed, opts, observer);
}

} // namespace coordsketch
