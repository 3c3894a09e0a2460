#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "coordsketch/higher_order.hpp"
#include "oracles.hpp"

using namespace coordsketch;

namespace {

std::vector<TupleServer> random_servers(std::size_t s, std::size_t rows, std::size_t n, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0x40});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TupleServer> out(s);
    for (auto& server : out)
        for (std::size_t r = 0; r < rows; ++r) {
            std::vector<double> v(n);
            for (auto& x : v) x = u(rng);
            server.rows.push_back(std::move(v));
        }
    return out;
}

const TupleFn kProduct = [](std::span<const double> v) {
    double p = 1.0;
    for (double x : v) p *= x;
    return p;
};

double brute_force(const std::vector<TupleServer>& servers, const FnSpec& fn, const TupleFn& g, std::size_t k) {
    std::size_t n = servers.front().rows.front().size();
    double total = 0.0;
    oracle::each_tuple(n, k, [&](const std::vector<std::size_t>& t) {
        double w = 0.0;
        std::vector<double> args(k);
        for (const auto& s : servers)
            for (const auto& row : s.rows) {
                for (std::size_t q = 0; q < k; ++q) args[q] = row[t[q]];
                w += g(args);
            }
        total += fn(w);
    });
    return total;
}

} // namespace

TEST(TupleIndexer, RankMatchesLexicographicPosition) {
    for (auto [n, k] : {std::pair<std::size_t, std::size_t>{5, 1}, {5, 2}, {6, 3}, {4, 4}, {7, 2}}) {
        TupleIndexer idx(n, k);
        std::uint64_t pos = 0;
        oracle::each_tuple(n, k, [&](const std::vector<std::size_t>& t) {
            EXPECT_EQ(idx.rank(t), pos);
            EXPECT_EQ(idx.unrank(pos), t);
            ++pos;
        });
        EXPECT_EQ(idx.count(), pos) << n << "," << k;
        std::uint64_t seen = 0;
        idx.for_each([&](std::uint64_t r, std::span<const std::size_t> t) {
            EXPECT_EQ(r, seen++);
            EXPECT_EQ(idx.rank(t), r);
        });
        EXPECT_EQ(seen, pos);
    }
}

TEST(TupleIndexer, RejectsBadOrders) {
    EXPECT_THROW(TupleIndexer(3, 4), std::invalid_argument);
    EXPECT_THROW(TupleIndexer(3, 0), std::invalid_argument);
    auto servers = random_servers(2, 2, 3, 1);
    EXPECT_THROW(higher_order_correlation(servers, power_fn(2), kProduct, 4, 0.5, 1), std::invalid_argument);
}

TEST(HigherOrder, ExactMatchesBruteForce) {
    auto servers = random_servers(3, 4, 8, 2);
    for (std::size_t k : {1u, 2u, 3u})
        EXPECT_NEAR(higher_order_exact(servers, power_fn(2), kProduct, k), brute_force(servers, power_fn(2), kProduct, k),
                    1e-9 * brute_force(servers, power_fn(2), kProduct, k));
}

TEST(HigherOrder, OrderOneReducesToAPlainSum) {
    const std::size_t n = 25;
    const double eps = 0.2;
    TupleFn identity = [](std::span<const double> v) { return v[0]; };
    int good = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        auto servers = random_servers(3, 2, n, 10 + trial);
        double plain = 0.0;
        for (const auto& s : servers)
            for (const auto& row : s.rows)
                for (double v : row) plain += v;
        auto res = higher_order_correlation(servers, power_fn(1), identity, 1, eps, trial);
        good += std::abs(res.estimate - plain) <= eps * plain;
    }
    EXPECT_GE(good, 16);
}

TEST(HigherOrder, PairsAgainstEnumeration) {
    const double eps = 0.2;
    int good = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        auto servers = random_servers(3, 4, 10, 30 + trial);
        double truth = brute_force(servers, power_fn(2), kProduct, 2);
        auto res = higher_order_correlation(servers, power_fn(2), kProduct, 2, eps, trial);
        EXPECT_EQ(res.tuples, 90u);
        EXPECT_EQ(res.stats.rounds_used(), 2);
        good += std::abs(res.estimate - truth) <= eps * truth;
    }
    EXPECT_GE(good, 16);
}

TEST(HigherOrder, ReservoirPathKeepsMemoryBelowTupleCount) {
    const std::size_t s = 3;
    auto fn = power_fn(2);
    HocOptions opts;
    opts.fsum.sample_const = 32.0 / make_protocol_params(fn, 90, s, opts.fsum).N;
    ASSERT_NEAR(make_protocol_params(fn, 90, s, opts.fsum).N, 32.0, 1.0);
    int good = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        auto servers = random_servers(s, 4, 10, 50 + trial);
        double truth = brute_force(servers, fn, kProduct, 2);
        auto res = higher_order_correlation(servers, fn, kProduct, 2, 0.2, trial, opts);
        EXPECT_LE(res.peak_records, static_cast<std::size_t>(res.params.N) + 1);
        EXPECT_LT(res.peak_records, 90u);
        good += std::abs(res.estimate - truth) <= 0.2 * truth;
    }
    EXPECT_GE(good, 16);
}

TEST(HigherOrder, StreamingPathRecordsOnlyItsOutput) {
    auto servers = random_servers(3, 4, 10, 70);
    auto res = higher_order_correlation(servers, power_fn(2), kProduct, 2, 0.3, 1);
    EXPECT_GT(res.params.N, static_cast<double>(HocOptions{}.reservoir_cap));
    EXPECT_LE(res.peak_records, 91u);
}

TEST(HigherOrder, RejectsBadRows) {
    std::vector<TupleServer> neg = {{{{1.0, -1.0, 2.0}}}};
    EXPECT_THROW(higher_order_correlation(neg, power_fn(2), kProduct, 2, 0.9, 1), InvalidInstance);
    std::vector<TupleServer> ragged = {{{{1.0, 1.0, 2.0}, {1.0, 2.0}}}};
    EXPECT_THROW(higher_order_correlation(ragged, power_fn(2), kProduct, 2, 0.9, 1), InvalidInstance);
    std::vector<TupleServer> zero = {{{{0.0, 0.0, 0.0}}}};
    EXPECT_THROW(higher_order_correlation(zero, power_fn(2), kProduct, 2, 0.9, 1), InvalidInstance);
}

TEST(HigherOrder, Deterministic) {
    auto servers = random_servers(2, 3, 6, 80);
    auto a = higher_order_correlation(servers, power_fn(2), kProduct, 2, 0.3, 5);
    auto b = higher_order_correlation(servers, power_fn(2), kProduct, 2, 0.3, 5);
    EXPECT_EQ(a.estimate, b.estimate);
    EXPECT_EQ(a.stats, b.stats);
}

TEST(TupleMemoryMeter, KeepsThePeak) {
    TupleMemoryMeter m;
    m.observe(3);
    m.observe(10);
    m.observe(4);
    EXPECT_EQ(m.peak.load(), 10u);
}
