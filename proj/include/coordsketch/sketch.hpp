#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "coordsketch/comm.hpp"
#include "coordsketch/dataset.hpp"
#include "coordsketch/errors.hpp"
#include "coordsketch/lp.hpp"
#include "coordsketch/random.hpp"

namespace coordsketch {

struct SketchParams {
    double p = 2.0;
    double eps = 0.25;
    double delta = 0.01;
    double sketch_const = 1.0; // C in p_key = C * tau~ * oversampling
    std::uint64_t salt = 0;

    bool operator==(const SketchParams&) const = default;
};

inline void validate(const SketchParams& sp) {
    if (!(sp.p >= 1.0)) throw std::invalid_argument("sketch: p must be at least 1");
    if (!(sp.eps > 0.0 && sp.eps < 1.0)) throw std::invalid_argument("sketch: eps out of range (0, 1)");
    if (!(sp.delta > 0.0 && sp.delta < 1.0)) throw std::invalid_argument("sketch: delta out of range (0, 1)");
    if (!(sp.sketch_const > 0.0)) throw std::invalid_argument("sketch: sketch constant must be positive");
}

/// Multiplier turning tau~ into a sampling probability. p = 2 uses the lighter
/// log(d/eps) + log(1/delta) leverage-score rate; other p carry an extra d.
inline double oversampling(const SketchParams& sp, std::size_t d) {
    double dd = static_cast<double>(std::max<std::size_t>(d, 1));
    double dim_term = std::log(std::max(dd / sp.eps, 1.0));
    if (sp.p != 2.0) dim_term *= dd;
    return sp.sketch_const * (dim_term + std::log(1.0 / sp.delta)) / (sp.eps * sp.eps);
}

struct SampleEntry {
    std::string key;
    std::vector<double> val;
    double p_key = 0.0; // unclamped; the sampling probability is min(1, p_key)

    double prob() const noexcept { return std::min(1.0, p_key); }
    bool operator==(const SampleEntry&) const = default;
};

/// Entries of one hash function h_i, sorted by key.
struct SenSample {
    std::uint64_t hash_index = 1;
    std::vector<SampleEntry> entries;

    bool operator==(const SenSample&) const = default;
};

struct Sketch {
    SketchParams params;
    std::size_t d = 0;
    std::size_t t = 0;
    double gamma = 0.0;
    std::vector<SenSample> samples; // samples[i - 1] uses h_i

    std::size_t entry_count() const {
        std::size_t c = 0;
        for (const auto& s : samples) c += s.entries.size();
        return c;
    }

    /// tau~ of an entry, recovered from its stored probability.
    double tau_tilde(const SampleEntry& e) const { return e.p_key / oversampling(params, d); }

    bool operator==(const Sketch&) const = default;
};

/// Key, d values and probability per entry, plus a fixed parameter header.
inline std::uint64_t sketch_words(const Sketch& sk) {
    constexpr std::uint64_t header = 10;
    std::uint64_t w = header;
    for (const auto& s : sk.samples) w += 2 + s.entries.size() * (words::kId + sk.d * words::kReal + words::kReal);
    return w;
}

namespace detail {

inline SenSample filter_sample(const Dataset& data, std::span<const double> p_keys, std::uint64_t salt,
                               std::uint64_t index) {
    SenSample out;
    out.hash_index = index;
    std::size_t row = 0;
    for (const auto& [key, val] : data.rows()) {
        double p = p_keys[row++];
        if (uniform_hash(key, salt, index) <= p) out.entries.push_back({key, val, p});
    }
    return out;
}

/// (val, largest stored probability) per key over one hash index of several sketches.
struct Pool {
    struct Item {
        const std::vector<double>* val;
        double p_key;
    };
    std::map<std::string, Item> items;

    void add(const SampleEntry& e) {
        auto [it, fresh] = items.try_emplace(e.key, Item{&e.val, e.p_key});
        if (fresh) return;
        if (*it->second.val != e.val) throw ConformingViolation("key '" + e.key + "' maps to different rows");
        it->second.p_key = std::max(it->second.p_key, e.p_key);
    }
};

inline Pool pool_of(std::span<const Sketch> sks, std::size_t index) {
    Pool pool;
    for (const auto& sk : sks)
        for (const auto& e : sk.samples.at(index - 1).entries) pool.add(e);
    return pool;
}

inline Eigen::MatrixXd weighted_rows(const Pool& pool, std::size_t d, double p) {
    Eigen::MatrixXd M(static_cast<Eigen::Index>(pool.items.size()), static_cast<Eigen::Index>(d));
    Eigen::Index r = 0;
    for (const auto& [key, item] : pool.items) {
        double w = std::pow(1.0 / std::min(1.0, item.p_key), 1.0 / p);
        for (std::size_t c = 0; c < d; ++c) M(r, static_cast<Eigen::Index>(c)) = w * (*item.val)[c];
        ++r;
    }
    return M;
}

/// Sensitivity with respect to M, extended to a zero or empty M.
class PoolSensitivity {
public:
    PoolSensitivity(const Eigen::MatrixXd& M, double p) {
        if (M.rows() > 0 && M.cwiseAbs().maxCoeff() > 0.0) oracle_.emplace(M, p);
    }
    double operator()(const std::vector<double>& val) const {
        Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(val.data(), static_cast<Eigen::Index>(val.size()));
        if (oracle_) return (*oracle_)(a);
        return a.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }

private:
    std::optional<SensitivityOracle> oracle_;
};

} // namespace detail

/// Builds sk_{t,0} from given sensitivities: tau~ = (1+eps)^t tau for every key.
inline Sketch create_sketch_from_scores(const Dataset& data, std::span<const double> tau, std::size_t t,
                                        const SketchParams& sp) {
    validate(sp);
    if (t < 1) throw std::invalid_argument("sketch: t must be at least 1");
    if (tau.size() != data.size()) throw std::invalid_argument("sketch: one score per row required");
    Sketch sk;
    sk.params = sp;
    sk.d = data.d();
    sk.t = t;
    double scale = std::pow(1.0 + sp.eps, static_cast<double>(t)) * oversampling(sp, sk.d);
    std::vector<double> p_keys(tau.size());
    for (std::size_t r = 0; r < tau.size(); ++r) p_keys[r] = scale * tau[r];
    for (std::size_t i = 1; i <= t; ++i) sk.samples.push_back(detail::filter_sample(data, p_keys, sp.salt, i));
    return sk;
}

/// Exact sensitivities of the dataset's rows; all zero for the zero dataset.
inline std::vector<double> dataset_sensitivities(const Dataset& data, double p) {
    std::vector<double> tau(data.size(), 0.0);
    if (data.empty()) return tau;
    Eigen::MatrixXd A = data.matrix();
    if (A.cwiseAbs().maxCoeff() == 0.0) return tau;
    Eigen::VectorXd s = lp_sensitivities(A, p);
    for (std::size_t r = 0; r < tau.size(); ++r) tau[r] = s(static_cast<Eigen::Index>(r));
    return tau;
}

inline Sketch create_sketch(const Dataset& data, std::size_t t, const SketchParams& sp) {
    validate(sp);
    auto tau = dataset_sensitivities(data, sp.p);
    return create_sketch_from_scores(data, tau, t, sp);
}

/// Rows (1/p_key)^{1/p} val of the first SenSample.
inline Eigen::MatrixXd solve_embedding(const Sketch& sk) {
    if (sk.samples.empty()) throw std::invalid_argument("solve: sketch has no samples");
    const auto& entries = sk.samples.front().entries;
    Eigen::MatrixXd M(static_cast<Eigen::Index>(entries.size()), static_cast<Eigen::Index>(sk.d));
    for (std::size_t r = 0; r < entries.size(); ++r) {
        double w = std::pow(1.0 / entries[r].prob(), 1.0 / sk.params.p);
        for (std::size_t c = 0; c < sk.d; ++c)
            M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w * entries[r].val[c];
    }
    return M;
}

namespace detail {

inline void check_compatible(std::span<const Sketch> sks) {
    if (sks.empty()) throw std::invalid_argument("merge: no sketches");
    for (const auto& sk : sks) {
        if (!(sk.params == sks.front().params)) throw std::invalid_argument("merge: sketch parameters or salt differ");
        if (sk.d != sks.front().d) throw std::invalid_argument("merge: sketch widths differ");
    }
}

} // namespace detail

/// Merges sketches of conforming datasets into sk_{min t - 1, delta + sum gamma}
/// of their union. Throws MergeFailure when a recomputed probability exceeds
/// what the inputs stored for that hash index.
inline Sketch merge_sketches(std::span<const Sketch> sks) {
    detail::check_compatible(sks);
    std::size_t t = sks.front().t;
    double gamma = sks.front().params.delta;
    for (const auto& sk : sks) {
        t = std::min(t, sk.t);
        gamma += sk.gamma;
    }
    if (t < 2) throw BudgetViolation("merge: every input needs t >= 2 (got t = " + std::to_string(t) + ")");
    const SketchParams& sp = sks.front().params;
    const std::size_t d = sks.front().d;

    Eigen::MatrixXd M = detail::weighted_rows(detail::pool_of(sks, t), d, sp.p);
    detail::PoolSensitivity sens(M, sp.p);
    const double scale = std::pow(1.0 + sp.eps, static_cast<double>(t - 1)) * (1.0 + sp.eps / 4.0) * oversampling(sp, d);

    Sketch out;
    out.params = sp;
    out.d = d;
    out.t = t - 1;
    out.gamma = std::min(1.0, gamma);
    for (std::size_t i = 1; i < t; ++i) {
        SenSample s;
        s.hash_index = i;
        for (const auto& [key, item] : detail::pool_of(sks, i).items) {
            double p = scale * sens(*item.val);
            if (std::min(1.0, p) > std::min(1.0, item.p_key))
                throw MergeFailure("merge: recomputed probability for key '" + key + "' at hash " + std::to_string(i) +
                                   " exceeds the stored one");
            if (uniform_hash(key, sp.salt, i) <= p) s.entries.push_back({key, *item.val, p});
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

/// Embedding for the union of the sketched datasets without spending merge
/// budget: every key of the union reaches h_1 with the largest probability any
/// input assigned it, so the first-index pool is itself a sensitivity sample.
inline Eigen::MatrixXd solve_union_embedding(std::span<const Sketch> sks) {
    detail::check_compatible(sks);
    for (const auto& sk : sks)
        if (sk.t < 1) throw BudgetViolation("union solve: sketch has no samples");
    return detail::weighted_rows(detail::pool_of(sks, 1), sks.front().d, sks.front().params.p);
}

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int b = 0; b < 4; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int b = 0; b < 8; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view in) : in_(in) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw std::runtime_error("sketch bytes: truncated input");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int b = 0; b < n; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + b])) << (8 * b);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::string_view in_;
    std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kSketchVersion = 1;

} // namespace detail

/// Little-endian, length-prefixed encoding; equal sketches give equal bytes.
inline std::string serialize(const Sketch& sk) {
    detail::ByteWriter w;
    w.bytes("LPSK");
    w.u32(detail::kSketchVersion);
    w.u64(sk.d);
    w.u64(sk.t);
    w.f64(sk.params.p);
    w.f64(sk.params.eps);
    w.f64(sk.params.delta);
    w.f64(sk.gamma);
    w.f64(sk.params.sketch_const);
    w.u64(sk.params.salt);
    w.u64(sk.samples.size());
    for (const auto& s : sk.samples) {
        w.u64(s.hash_index);
        w.u64(s.entries.size());
        for (const auto& e : s.entries) {
            w.u64(e.key.size());
            w.bytes(e.key);
            for (double v : e.val) w.f64(v);
            w.f64(e.p_key);
        }
    }
    return w.take();
}

inline Sketch deserialize(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.bytes(4) != "LPSK") throw std::runtime_error("sketch bytes: bad magic");
    if (r.u32() != detail::kSketchVersion) throw std::runtime_error("sketch bytes: unsupported version");
    Sketch sk;
    sk.d = r.u64();
    sk.t = r.u64();
    sk.params.p = r.f64();
    sk.params.eps = r.f64();
    sk.params.delta = r.f64();
    sk.gamma = r.f64();
    sk.params.sketch_const = r.f64();
    sk.params.salt = r.u64();
    std::uint64_t count = r.u64();
    if (count != sk.t) throw std::runtime_error("sketch bytes: sample count differs from t");
    for (std::uint64_t i = 0; i < count; ++i) {
        SenSample s;
        s.hash_index = r.u64();
        std::uint64_t entries = r.u64();
        for (std::uint64_t e = 0; e < entries; ++e) {
            SampleEntry entry;
            entry.key = r.bytes(r.u64());
            entry.val.resize(sk.d);
            for (auto& v : entry.val) v = r.f64();
            entry.p_key = r.f64();
            s.entries.push_back(std::move(entry));
        }
        sk.samples.push_back(std::move(s));
    }
    if (!r.done()) throw std::runtime_error("sketch bytes: trailing data");
    return sk;
}

} // namespace coordsketch
