// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "coordsketch/additive_sampler.hpp"
#include "coordsketch/congest.hpp"
#include "coordsketch/experiment.hpp"
#include "coordsketch/fsum.hpp"
#include "coordsketch/higher_order.hpp"
#include "coordsketch/regression.hpp"
#include "coordsketch/sketch.hpp"
#include "oracles.hpp"

using namespace coordsketch;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, double limit_s, const std::function<Verdict()>& body) {
    auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("threw: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool ok = v.pass && secs <= limit_s;
    failures += !ok;
    std::printf("%s criterion %d (%s): %s; %.1fs of %.0fs\n", ok ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs,
                limit_s);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<ServerVector> uniform_servers(std::size_t n, std::size_t s, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0xacc});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ServerVector> out;
    for (std::size_t j = 0; j < s; ++j) {
        ServerVector sv{j, std::vector<double>(n)};
        for (auto& x : sv.entries) x = u(rng);
        out.push_back(std::move(sv));
    }
    return out;
}

std::vector<double> aggregate(const std::vector<ServerVector>& servers) {
    std::vector<double> x(servers.front().entries.size(), 0.0);
    for (const auto& sv : servers)
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += sv.entries[i];
    return x;
}

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0xacd});
    std::normal_distribution<double> g;
    Eigen::MatrixXd A(rows, cols);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
    return A;
}

Dataset keyed_rows(const Eigen::MatrixXd& pool, Eigen::Index first, Eigen::Index last) {
    Dataset out(static_cast<std::size_t>(pool.cols()));
    for (Eigen::Index r = first; r < last; ++r) {
        std::vector<double> row(static_cast<std::size_t>(pool.cols()));
        for (Eigen::Index c = 0; c < pool.cols(); ++c) row[static_cast<std::size_t>(c)] = pool(r, c);
        out.insert("row" + std::to_string(r), std::move(row));
    }
    return out;
}

// Shared by criteria 1, 3, 5 and 11.
struct FkRun {
    int within = 0, trials = 0;
    bool all_two_rounds = true;
    std::uint64_t xhat_checked = 0, xhat_over = 0;
};

FkRun run_fk_trials(ExpBackend backend) {
    const std::size_t n = 1000, s = 8;
    const double k = 3.0, eps = 0.1;
    FkRun run;
    FsumOptions opts;
    opts.backend = backend;
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        auto servers = uniform_servers(n, s, 1000 + trial);
        std::vector<double> x = aggregate(servers);
        double truth = 0.0;
        for (double v : x) truth += v * v * v;
        CopyObserver obs = [&](const CopyTrace& tr) {
            for (std::size_t q = 0; q < tr.estimate->coords.size(); ++q) {
                ++run.xhat_checked;
                run.xhat_over += tr.estimate->xhat[q] > x[tr.estimate->coords[q]] * (1 + 1e-12);
            }
        };
        auto res = fk_estimate(servers, k, eps, derive_seed(trial, {static_cast<std::uint64_t>(backend)}), opts, &obs);
        run.within += std::abs(res.estimate - truth) <= eps * truth;
        run.all_two_rounds = run.all_two_rounds && res.stats.rounds_used() == 2;
        ++run.trials;
    }
    return run;
}

FkRun fk_full;
std::vector<int> sampler_rounds;

} // namespace

int main() {
    report(1, "F_k accuracy", 300, [] {
        fk_full = run_fk_trials(ExpBackend::FullRandom);
        double frac = double(fk_full.within) / fk_full.trials;
        return Verdict{frac >= 0.8, fmt("%d/%d trials within eps = 0.1", fk_full.within, fk_full.trials)};
    });

    report(2, "communication scaling in s", 600, [] {
        ConfigMap raw = parse_config_text("protocol=fk\nn=1000\nk=3\neps=0.2\ntrials=3\nseeds=11\n");
        auto res = run_sweep(raw, "s", {"4", "8", "16"});
        if (!res.table) return Verdict{false, res.errors.front()};
        const auto& pts = res.table->points;
        double worst = 0.0;
        std::string words;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            words += (i ? "/" : "") + std::to_string(pts[i].summary.words_total);
            if (i > 0)
                worst = std::max(worst, double(pts[i].summary.words_total) / double(pts[i - 1].summary.words_total));
        }
        const double limit = std::pow(2.0, 3 - 1) * 3;
        return Verdict{worst <= limit, fmt("words s=4/8/16: %s; max growth per doubling %.2f (limit %.0f)",
                                           words.c_str(), worst, limit)};
    });

    report(4, "additive sampler law", 300, [] {
        const std::size_t n = 64, s = 4;
        auto servers = uniform_servers(n, s, 4);
        std::vector<double> q = aggregate(servers);
        double total = 0.0;
        for (double v : q) total += v;
        for (auto& v : q) v /= total;
        AdditiveSamplerConfig cfg;
        cfg.eps = 0.1;
        std::vector<double> hist(n, 0.0);
        std::size_t accepted = 0, runs = 0, in_band = 0;
        while (accepted < 100000) {
            auto [res, stats] = sample_additive(servers, cfg, derive_seed(44, {runs}));
            ++runs;
            sampler_rounds.push_back(stats.rounds_used());
            if (!res.ok()) continue;
            ++accepted;
            hist[res.index] += 1.0;
            double qi = q[res.index];
            in_band += res.q_hat >= qi / 2 && res.q_hat <= 2 * qi;
        }
        for (auto& h : hist) h /= double(accepted);
        double tv = oracle::total_variation(hist, q);
        double fail = 1.0 - double(accepted) / double(runs);
        double band = double(in_band) / double(accepted);
        return Verdict{tv <= 0.05 && fail <= 0.15 && band >= 0.95,
                       fmt("TV %.4f, fail rate %.4f over %zu runs, q_hat in [q/2, 2q] for %.4f", tv, fail, runs, band)};
    });

    report(3, "round counts", 60, [] {
        bool sampler_one = !sampler_rounds.empty() &&
                           std::all_of(sampler_rounds.begin(), sampler_rounds.end(), [](int r) { return r == 1; });
        auto servers = uniform_servers(256, 4, 3);
        auto huber = fsum_estimate(servers, huber_fn(1.0), 0.3, 3);
        bool fsum_two = fk_full.all_two_rounds && huber.stats.rounds_used() == 2;
        return Verdict{sampler_one && fsum_two,
                       fmt("%zu sampler runs all 1 round: %s; %d F_k runs and a Huber run all 2 rounds: %s",
                           sampler_rounds.size(), sampler_one ? "yes" : "no", fk_full.trials, fsum_two ? "yes" : "no")};
    });

    report(5, "underestimation", 10, [] {
        double frac = fk_full.xhat_checked ? double(fk_full.xhat_over) / double(fk_full.xhat_checked) : 1.0;
        return Verdict{fk_full.xhat_checked > 0 && frac <= 0.01,
                       fmt("%llu of %llu sampled-coordinate estimates exceed x_i (%.5f)",
                           (unsigned long long)fk_full.xhat_over, (unsigned long long)fk_full.xhat_checked, frac)};
    });

    report(6, "l2 subspace embedding", 120, [] {
        Dataset data = Dataset::from_matrix(gaussian(2000, 10, 6));
        Eigen::MatrixXd A = data.matrix();
        int ok = 0;
        double lo = 1e9, hi = 0;
        for (std::uint64_t salt = 0; salt < 100; ++salt) {
            SketchParams sp{.p = 2.0, .eps = 0.25, .delta = 0.01, .sketch_const = 1.0, .salt = salt};
            Eigen::VectorXd ev = oracle::generalized_eigenvalues(solve_embedding(create_sketch(data, 1, sp)), A);
            lo = std::min(lo, ev.minCoeff());
            hi = std::max(hi, ev.maxCoeff());
            ok += ev.minCoeff() >= 0.75 && ev.maxCoeff() <= 1.25;
        }
        return Verdict{ok >= 95, fmt("%d/100 salts; eigenvalues spanned [%.4f, %.4f]", ok, lo, hi)};
    });

    report(7, "merge deduplication", 180, [] {
        Eigen::MatrixXd pool = gaussian(1500, 8, 7);
        Dataset a = keyed_rows(pool, 0, 1000), b = keyed_rows(pool, 500, 1500), u = keyed_rows(pool, 0, 1500);
        Eigen::MatrixXd U = u.matrix();
        Eigen::VectorXd tau = oracle::gram_leverage(U);
        std::map<std::string, double> tau_of;
        auto keys = u.keys();
        for (std::size_t r = 0; r < keys.size(); ++r) tau_of[keys[r]] = tau(Eigen::Index(r));
        const double eps = 0.25;
        const std::size_t t = 3;
        int valid = 0;
        std::uint64_t checked = 0, violations = 0;
        for (std::uint64_t salt = 0; salt < 100; ++salt) {
            SketchParams sp{.p = 2.0, .eps = eps, .delta = 0.01, .sketch_const = 1.0, .salt = salt};
            std::vector<Sketch> parts = {create_sketch(a, t, sp), create_sketch(b, t, sp)};
            Sketch merged = merge_sketches(parts);
            valid += oracle::gram_within(solve_embedding(merged), U, eps);
            const double lo = std::pow(1 + eps, double(merged.t)), hi = std::pow(1 + eps, double(merged.t + 1));
            for (const auto& smp : merged.samples)
                for (const auto& e : smp.entries) {
                    double tt = merged.tau_tilde(e), ref = tau_of.at(e.key);
                    ++checked;
                    violations += tt < lo * ref * (1 - 1e-9) || tt > hi * ref * (1 + 1e-9);
                }
        }
        return Verdict{valid >= 95 && violations == 0,
                       fmt("%d/100 salts valid for the union; sandwich violated by %llu of %llu merged entries", valid,
                           (unsigned long long)violations, (unsigned long long)checked)};
    });

    report(8, "CONGEST propagation", 300, [] {
        const std::size_t d = 8, radius = 3, rows = 40;
        const double eps = 0.3;
        Graph g = Graph::grid(5, 5);
        for (std::size_t v = 0; v < g.size(); ++v)
            g.data(v) = Dataset::from_matrix(gaussian(rows, d, 800 + v), "node" + std::to_string(v) + "_");
        std::vector<Eigen::MatrixXd> balls;
        for (std::size_t v = 0; v < g.size(); ++v) balls.push_back(g.ball_union(v, radius).matrix());
        const double bound = 4.0 * radius * d * (std::log(double(d)) + radius * std::log(25.0)) / (eps * eps);
        double worst_frac = 1.0;
        std::size_t peak = 0;
        for (std::uint64_t salt = 0; salt < 20; ++salt) {
            SketchParams sp{.p = 2.0, .eps = eps, .delta = propagation_delta(g.size(), radius), .sketch_const = 1.0,
                            .salt = salt};
            auto res = propagate(g, radius, sp);
            int good = 0;
            for (std::size_t v = 0; v < g.size(); ++v)
                good += res.attempt_used[v] >= 0 && oracle::gram_within(res.embeddings[v], balls[v], eps);
            worst_frac = std::min(worst_frac, double(good) / double(g.size()));
            for (const auto& tr : res.traffic) peak = std::max(peak, tr.rows_sent);
        }
        return Verdict{worst_frac >= 0.9 && double(peak) <= bound,
                       fmt("worst salt had %.0f%% of nodes valid; peak rows per node per round %zu (bound %.0f)",
                           100 * worst_frac, peak, bound)};
    });

    report(9, "regression and low-rank approximation", 300, [] {
        const double eps = 0.25;
        // Least squares against the normal equations.
        Eigen::MatrixXd X = gaussian(2000, 6, 90);
        Eigen::VectorXd y = X * Eigen::VectorXd::LinSpaced(6, -1, 1) + gaussian(2000, 1, 91);
        Eigen::MatrixXd rows(2000, 7);
        rows << X, y;
        Dataset reg = Dataset::from_matrix(rows);
        Eigen::MatrixXd ordered = reg.matrix();
        double opt = regression_cost(ordered, oracle::least_squares(ordered.leftCols(6), ordered.col(6)), 2.0);
        int ls_ok = 0;
        for (std::uint64_t salt = 0; salt < 100; ++salt) {
            SketchParams sp{.p = 2.0, .eps = eps, .delta = 0.01, .sketch_const = 1.0, .salt = salt};
            auto fit = solve_regression(create_sketch(reg, 1, sp));
            ls_ok += regression_cost(ordered, fit.coef, 2.0) <= (1 + 3 * eps) * opt;
        }
        // Rank-5 approximation of a noisy 200 x 30 matrix against the truncated SVD.
        Eigen::MatrixXd L = gaussian(200, 5, 92) * gaussian(5, 30, 93) + 0.01 * gaussian(200, 30, 94);
        Dataset low = Dataset::from_matrix(L);
        const double best = oracle::tail_energy(L, 5);
        auto residual = [](const Eigen::MatrixXd& A, const Eigen::MatrixXd& V) {
            return (A - A * V * V.transpose()).squaredNorm();
        };
        int lra_ok = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed)
            lra_ok += residual(L, solve_lra(low, 5, eps, 0.01, seed).basis) <= (1 + 3 * eps) * best;
        // Sketch size once the rows outnumber what the sketch can hold.
        std::vector<std::size_t> sizes;
        std::size_t m = 0;
        for (Eigen::Index n : {20000, 40000}) {
            Eigen::MatrixXd big = gaussian(n, 5, 95) * gaussian(5, 30, 96) + 0.01 * gaussian(n, 30, 97);
            auto res = solve_lra(Dataset::from_matrix(big), 5, eps, 0.01, 1);
            sizes.push_back(res.sketch_rows);
            m = res.m;
        }
        double growth = double(sizes[1]) / double(sizes[0]);
        bool invariant = growth <= 1.15 && sizes[0] < 20000;
        return Verdict{ls_ok >= 95 && lra_ok >= 90 && invariant,
                       fmt("least squares %d/100; rank-5 residual %d/100; sketch rows %zu at n=20000 and %zu at "
                           "n=40000 (m = %zu sign columns)",
                           ls_ok, lra_ok, sizes[0], sizes[1], m)};
    });

    report(10, "higher-order correlations", 180, [] {
        const std::size_t s = 3, k = 2;
        const double eps = 0.2;
        const FnSpec fn = power_fn(2);
        const TupleFn product = [](std::span<const double> v) {
            double p = 1.0;
            for (double x : v) p *= x;
            return p;
        };
        auto make = [&](std::size_t n, std::uint64_t seed) {
            Rng rng = make_rng(seed, {0x10c});
            std::uniform_real_distribution<double> u(0.0, 1.0);
            std::vector<TupleServer> servers(s);
            for (auto& sv : servers)
                for (int r = 0; r < 4; ++r) {
                    std::vector<double> row(n);
                    for (auto& x : row) x = u(rng);
                    sv.rows.push_back(std::move(row));
                }
            return servers;
        };
        // Brute force over every ordered pair of distinct coordinates.
        auto truth_of = [&](const std::vector<TupleServer>& servers, std::size_t n) {
            double total = 0.0;
            oracle::each_tuple(n, k, [&](const std::vector<std::size_t>& t) {
                double w = 0.0;
                for (const auto& sv : servers)
                    for (const auto& row : sv.rows) w += row[t[0]] * row[t[1]];
                total += w * w;
            });
            return total;
        };
        // Per-server samples held to about 32 records.
        auto options_for = [&](std::size_t n) {
            HocOptions opts;
            opts.fsum.sample_const = 32.0 / make_protocol_params(fn, n * (n - 1), s, opts.fsum).N;
            return opts;
        };
        int good = 0;
        std::size_t peak10 = 0;
        double N10 = 0;
        for (std::uint64_t trial = 0; trial < 50; ++trial) {
            auto servers = make(10, 500 + trial);
            auto res = higher_order_correlation(servers, fn, product, k, eps, trial, options_for(10));
            double truth = truth_of(servers, 10);
            good += std::abs(res.estimate - truth) <= eps * truth;
            peak10 = std::max(peak10, res.peak_records);
            N10 = res.params.N;
        }
        std::size_t peak20 = 0;
        for (std::uint64_t trial = 0; trial < 5; ++trial) {
            auto res = higher_order_correlation(make(20, 600 + trial), fn, product, k, eps, trial, options_for(20));
            peak20 = std::max(peak20, res.peak_records);
        }
        bool memory = peak10 < 90 && peak20 < 90 && peak10 <= std::size_t(N10) + 1;
        return Verdict{good >= 40 && memory,
                       fmt("%d/50 within eps = 0.2; peak records %zu for 90 tuples (n = 10) and %zu for 380 tuples "
                           "(n = 20)",
                           good, peak10, peak20)};
    });

    report(11, "randomness laws", 300, [] {
        // Max-stability: sum f / max(f_i / e_i) is standard exponential.
        const std::size_t n = 50;
        std::vector<double> f(n);
        for (std::size_t i = 0; i < n; ++i) f[i] = 1.0 + double(i % 7);
        double F = 0.0;
        for (double v : f) F += v;
        std::vector<double> u;
        std::vector<double> hits(n, 0.0);
        const int draws = 40000;
        for (int r = 0; r < draws; ++r) {
            ExpStream ex(derive_seed(1100, {std::uint64_t(r)}), n, 48);
            double best = 0.0;
            std::size_t arg = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (f[i] / ex(i) > best) {
                    best = f[i] / ex(i);
                    arg = i;
                }
            u.push_back(1.0 - std::exp(-F / best));
            hits[arg] += 1.0;
        }
        double ks = oracle::ks_uniform(u);
        double argmax_dev = 0.0;
        for (std::size_t i = 0; i < n; ++i) argmax_dev = std::max(argmax_dev, std::abs(hits[i] / draws - f[i] / F));
        // Heavy hitter: the maximum carries at least 1/(C ln^2 n) of the sum.
        const std::size_t hn = 1024;
        const double C = 4.0, L = std::log(double(hn));
        Rng rng = make_rng(1101);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::vector<double> g(hn);
        for (auto& v : g) v = unif(rng) * unif(rng);
        int weak = 0;
        const int hh_seeds = 5000;
        for (int r = 0; r < hh_seeds; ++r) {
            ExpStream ex(derive_seed(1102, {std::uint64_t(r)}), hn, 48);
            double mx = 0.0, sum = 0.0;
            for (std::size_t i = 0; i < hn; ++i) {
                mx = std::max(mx, g[i] / ex(i));
                sum += g[i] / ex(i);
            }
            weak += mx < sum / (C * L * L);
        }
        double weak_frac = double(weak) / hh_seeds;
        // Criterion 1 again with exponentials from the small-seed generator.
        FkRun prg = run_fk_trials(ExpBackend::NisanPrg);
        double prg_frac = double(prg.within) / prg.trials;
        return Verdict{ks <= 0.02 && argmax_dev <= 0.02 && weak_frac <= 0.01 && prg_frac >= 0.8,
                       fmt("max-stability KS %.4f; argmax deviation %.4f; heavy-hitter failure %.4f; generator-backed "
                           "F_k %d/%d",
                           ks, argmax_dev, weak_frac, prg.within, prg.trials)};
    });

    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
