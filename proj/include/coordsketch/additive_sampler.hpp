#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "coordsketch/comm.hpp"
#include "coordsketch/dataset.hpp"
#include "coordsketch/lp.hpp"
#include "coordsketch/random.hpp"
#include "coordsketch/sampling.hpp"

namespace coordsketch {

struct AdditiveSamplerConfig {
    double eps = 0.1;
    double sample_const = 1.0; // c_S in S = ceil(c_S eps^-2 ln^5 n)
    double heavy_const = 4.0;  // C in the heavy-hitter threshold
    unsigned precision_bits = 48;
    /// Ship the 2S draws as explicit lists. Otherwise only the histograms of
    /// the list segments the coordinator reads are drawn (same distribution,
    /// since the draws are i.i.d.).
    bool materialize_draws = false;
};

struct SampleResult {
    enum class Outcome { Ok, FailWeakMax, FailSmallGap };

    Outcome outcome = Outcome::FailWeakMax;
    std::size_t index = 0; // 0-based coordinate
    double q_hat = 0.0;
    int attempts = 1;

    bool ok() const noexcept { return outcome == Outcome::Ok; }
};

inline const char* to_string(SampleResult::Outcome o) {
    switch (o) {
        case SampleResult::Outcome::Ok: return "ok";
        case SampleResult::Outcome::FailWeakMax: return "fail_weak_max";
        case SampleResult::Outcome::FailSmallGap: return "fail_small_gap";
    }
    return "?";
}

inline double sampler_log_n(std::size_t n) { return std::log(static_cast<double>(std::max<std::size_t>(n, 2))); }

inline std::uint64_t samples_per_half(std::size_t n, const AdditiveSamplerConfig& cfg) {
    double s = std::ceil(cfg.sample_const * std::pow(sampler_log_n(n), 5.0) / (cfg.eps * cfg.eps));
    return static_cast<std::uint64_t>(std::max(1.0, s));
}

namespace detail {

/// A server's 2S i.i.d. draws from its local distribution.
class DrawList {
public:
    DrawList() = default;
    DrawList(std::vector<double> local, std::uint64_t length, std::uint64_t seed, bool materialize)
        : length_(length), seed_(seed) {
        if (materialize) {
            Rng rng(seed);
            std::discrete_distribution<std::size_t> pick(local.begin(), local.end());
            explicit_.resize(length);
            for (auto& v : explicit_) v = static_cast<std::uint32_t>(pick(rng));
            n_ = local.size();
        } else {
            local_ = std::move(local);
            n_ = local_.size();
        }
    }

    /// Per-coordinate counts among draws [begin, begin + len).
    void histogram(std::uint64_t begin, std::uint64_t len, std::vector<double>& into) const {
        if (len == 0) return;
        if (begin + len > length_) throw std::logic_error("draw list overrun");
        if (!explicit_.empty()) {
            for (std::uint64_t t = begin; t < begin + len; ++t) into[explicit_[t]] += 1.0;
            return;
        }
        Rng rng = make_rng(seed_, {begin, len});
        for (auto [i, k] : draw_multinomial(rng, local_, static_cast<double>(len))) into[i] += k;
    }

    std::uint64_t length() const noexcept { return length_; }

private:
    std::uint64_t length_ = 0;
    std::uint64_t seed_ = 0;
    std::size_t n_ = 0;
    std::vector<double> local_;
    std::vector<std::uint32_t> explicit_;
};

struct SamplerUp {
    double sum_p = 0.0;
    double sum_scaled = 0.0; // sum_i p_i(j) / e_i
    DrawList draws;

    std::uint64_t words() const { return draws.length() + 2 * words::kReal; }
};

struct NoDown {
    std::uint64_t words() const { return 0; }
};

class AdditiveSamplerProtocol {
public:
    using Up = SamplerUp;
    using Down = NoDown;
    using Output = SampleResult;

    AdditiveSamplerProtocol(const ExpStream& exps, std::size_t n, const AdditiveSamplerConfig& cfg, std::uint64_t seed)
        : exps_(&exps), n_(n), cfg_(cfg), seed_(seed), half_(samples_per_half(n, cfg)) {}

    struct Logic {
        const ExpStream* exps;
        std::uint64_t half;
        bool materialize;

        SamplerUp operator()(int, const ServerContext<ServerVector>& ctx, const NoDown*) const {
            SamplerUp up;
            const auto& p = ctx.data.entries;
            std::vector<double> local(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) {
                up.sum_p += p[i];
                local[i] = p[i] > 0.0 ? p[i] / exps->variate(i) : 0.0;
                up.sum_scaled += local[i];
            }
            std::uint64_t len = up.sum_scaled > 0.0 ? 2 * half : 0;
            up.draws = DrawList(std::move(local), len, derive_seed(ctx.seed, {0x5a, ctx.id}), materialize);
            return up;
        }
    };

    Logic server_logic() const { return Logic{exps_, half_, cfg_.materialize_draws}; }
    int round_budget() const { return 1; }

    std::variant<std::vector<Down>, Output> coordinate(int, std::vector<Up> ups) const {
        double total_p = 0.0, total_scaled = 0.0;
        std::vector<double> server_weight(ups.size());
        for (std::size_t j = 0; j < ups.size(); ++j) {
            total_p += ups[j].sum_p;
            total_scaled += ups[j].sum_scaled;
            server_weight[j] = ups[j].sum_scaled;
        }
        if (!(total_p > 0.0)) throw InvalidInstance("additive sampler: all-zero input");

        // Each of the 2S joint draws picks server j with probability
        // proportional to its scaled total and consumes that server's next draw.
        Rng rng = make_rng(seed_, {0xc0});
        auto first = split_counts(rng, server_weight, half_);
        auto second = split_counts(rng, server_weight, half_);
        std::vector<double> X(n_, 0.0), Y(n_, 0.0);
        for (std::size_t j = 0; j < ups.size(); ++j) {
            ups[j].draws.histogram(0, first[j], X);
            ups[j].draws.histogram(first[j], second[j], Y);
        }

        double top = 0.0, runner_up = 0.0;
        for (double x : X) {
            if (x > top) {
                runner_up = top;
                top = x;
            } else if (x > runner_up) {
                runner_up = x;
            }
        }
        SampleResult res;
        double log_n = sampler_log_n(n_);
        double S = static_cast<double>(half_);
        if (top < S / (2.0 * cfg_.heavy_const * log_n * log_n)) {
            res.outcome = SampleResult::Outcome::FailWeakMax;
            return res;
        }
        if (top <= (1.0 + cfg_.eps / 2.0) * runner_up) {
            res.outcome = SampleResult::Outcome::FailSmallGap;
            return res;
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < n_; ++i)
            if (Y[i] > Y[best]) best = i;
        res.outcome = SampleResult::Outcome::Ok;
        res.index = best;
        res.q_hat = exps_->variate(best) * (Y[best] / S) * total_scaled / total_p;
        return res;
    }

private:
    static std::vector<std::uint64_t> split_counts(Rng& rng, const std::vector<double>& weights, std::uint64_t total) {
        std::vector<std::uint64_t> out(weights.size(), 0);
        for (auto [j, k] : draw_multinomial(rng, weights, static_cast<double>(total)))
            out[j] = static_cast<std::uint64_t>(k);
        return out;
    }

    const ExpStream* exps_;
    std::size_t n_;
    AdditiveSamplerConfig cfg_;
    std::uint64_t seed_;
    std::uint64_t half_;
};

} // namespace detail

/// One-round sampling of a coordinate i with probability proportional to
/// q_i = sum_j p_i(j), together with an estimate of q_i / sum q.
inline std::pair<SampleResult, CommStats> sample_additive(std::span<const ServerVector> servers,
                                                          const AdditiveSamplerConfig& cfg, std::uint64_t seed) {
    if (!(cfg.eps > 0.0 && cfg.eps < 0.25)) throw std::invalid_argument("additive sampler: eps must be in (0, 1/4)");
    std::size_t n = validate_servers(servers);
    ExpStream exps(derive_seed(seed, {0xe0}), n, cfg.precision_bits);
    detail::AdditiveSamplerProtocol protocol(exps, n, cfg, seed);
    return run_coordinator_protocol(servers, protocol, seed);
}

/// Reruns with fresh seeds until Ok or `max_attempts` runs; statistics of all
/// attempts are accumulated, each attempt occupying its own round.
inline std::pair<SampleResult, CommStats> sample_additive_with_retry(std::span<const ServerVector> servers,
                                                                     const AdditiveSamplerConfig& cfg,
                                                                     std::uint64_t seed, int max_attempts = 16) {
    CommStats total;
    SampleResult res;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        auto [r, stats] = sample_additive(servers, cfg, attempt == 0 ? seed : derive_seed(seed, {0xa7, static_cast<std::uint64_t>(attempt)}));
        for (const auto& [key, count] : stats.entries()) total.charge(key.first, key.second + attempt, count);
        res = r;
        res.attempts = attempt + 1;
        if (res.ok()) break;
    }
    return {res, total};
}

struct LeverageSample {
    std::string tag;
    double prob_estimate = 0.0;
    SampleResult result;
    CommStats stats;
};

/// Samples a row tag from the union of tagged matrices with probability
/// proportional to sum_j tau_{A(j)}(a_t), the sum of per-server leverage scores.
/// Servers holding a tag twice count it once.
inline LeverageSample dedup_leverage_sample(std::span<const Dataset> tagged, std::uint64_t seed,
                                            AdditiveSamplerConfig cfg = {}, int max_attempts = 16) {
    Dataset all = Dataset::conforming_union(tagged);
    if (all.empty()) throw InvalidInstance("dedup leverage sample: no rows");
    std::vector<std::string> tags = all.keys();
    std::vector<ServerVector> servers(tagged.size());
    for (std::size_t j = 0; j < tagged.size(); ++j) {
        servers[j].owner = j;
        servers[j].entries.assign(tags.size(), 0.0);
        if (tagged[j].empty()) continue;
        Eigen::MatrixXd A = tagged[j].matrix();
        if (A.cwiseAbs().maxCoeff() == 0.0) continue;
        Eigen::VectorXd tau = lp_sensitivities(A, 2.0);
        std::size_t row = 0;
        for (const auto& [key, vals] : tagged[j].rows()) {
            auto pos = std::lower_bound(tags.begin(), tags.end(), key) - tags.begin();
            servers[j].entries[static_cast<std::size_t>(pos)] = tau(static_cast<Eigen::Index>(row++));
        }
    }
    auto [res, stats] = sample_additive_with_retry(servers, cfg, seed, max_attempts);
    LeverageSample out;
    out.result = res;
    out.stats = std::move(stats);
    if (res.ok()) {
        out.tag = tags[res.index];
        out.prob_estimate = res.q_hat;
    }
    return out;
}

} // namespace coordsketch
