#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "coordsketch/additive_sampler.hpp"
#include "coordsketch/congest.hpp"
#include "coordsketch/dataset.hpp"
#include "coordsketch/fn_spec.hpp"
#include "coordsketch/fsum.hpp"
#include "coordsketch/higher_order.hpp"
#include "coordsketch/regression.hpp"
#include "coordsketch/sketch.hpp"

namespace coordsketch {

enum class Protocol { Sample, Fsum, Fk, Hoc, Embed, Regress, Lra, Congest };
enum class Generator { RandomUniform, RandomGaussian, File };

inline const char* to_string(Protocol p) {
    switch (p) {
        case Protocol::Sample: return "sample";
        case Protocol::Fsum: return "fsum";
        case Protocol::Fk: return "fk";
        case Protocol::Hoc: return "hoc";
        case Protocol::Embed: return "embed";
        case Protocol::Regress: return "regress";
        case Protocol::Lra: return "lra";
        case Protocol::Congest: return "congest";
    }
    return "?";
}

inline std::optional<Protocol> parse_protocol(const std::string& s) {
    for (auto p : {Protocol::Sample, Protocol::Fsum, Protocol::Fk, Protocol::Hoc, Protocol::Embed, Protocol::Regress,
                   Protocol::Lra, Protocol::Congest})
        if (s == to_string(p)) return p;
    return std::nullopt;
}

inline const char* to_string(Generator g) {
    switch (g) {
        case Generator::RandomUniform: return "random-uniform";
        case Generator::RandomGaussian: return "random-gaussian";
        case Generator::File: return "file";
    }
    return "?";
}

struct ExperimentConfig {
    Protocol protocol = Protocol::Fk;
    Generator generator = Generator::RandomUniform;
    std::size_t n = 1000;  // coordinates, rows, or tuple dimension
    std::size_t s = 4;     // servers
    std::size_t d = 8;     // columns
    double k = 3.0;        // moment order, tuple order, or target rank
    double p = 2.0;
    double eps = 0.1;
    double delta = 0.01;
    std::size_t radius = 2;
    std::size_t t = 0;     // merge budget, 0 = radius + 1
    std::size_t rows = 0;  // rows per server (hoc) or per node (congest), 0 = protocol default
    std::string fn;        // fsum/hoc function, e.g. pow:2 or huber:1
    std::string graph = "grid:5x5";
    double noise = 0.01;
    std::vector<std::uint64_t> seeds{1};
    std::size_t trials = 10;
    std::size_t jobs = 1;
    bool truth = false;
    std::string input, edges, manifest;

    double sample_const = 1.0;
    double heavy_const = 4.0;
    double sketch_const = 1.0;
    double sign_const = 1.0;
    ExpBackend backend = ExpBackend::FullRandom;
    double delta_budget = 0.0; // congest: 0 = 1/(10 s) (2 s)^-radius
};

struct ConfigResult {
    std::optional<ExperimentConfig> config;
    std::vector<std::string> errors;

    bool ok() const { return config.has_value(); }
};

using ConfigMap = std::map<std::string, std::string>;

/// key=value lines; '#' starts a comment. Later keys override earlier ones.
inline ConfigMap parse_config_text(const std::string& text, std::vector<std::string>* errors = nullptr) {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (errors) errors->push_back("line " + std::to_string(line_no) + ": expected key=value");
            continue;
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

namespace detail {

inline std::optional<std::uint64_t> parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        b += 2;
        base = 16;
    }
    auto res = std::from_chars(b, e, v, base);
    if (res.ec != std::errc() || res.ptr != e || b == e) return std::nullopt;
    return v;
}

inline std::optional<double> parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace detail

inline std::optional<std::uint64_t> parse_seed(const std::string& s) { return detail::parse_u64(s); }

/// Parses and checks a flat config. Every violation is reported, not just the first.
inline ConfigResult validate_config(const ConfigMap& raw) {
    ConfigResult res;
    auto& errors = res.errors;
    ExperimentConfig cfg;
    std::map<std::string, bool> seen;

    auto get = [&](const std::string& key) -> const std::string* {
        auto it = raw.find(key);
        if (it == raw.end()) return nullptr;
        seen[key] = true;
        return &it->second;
    };
    auto read_size = [&](const std::string& key, std::size_t& into) {
        if (const auto* v = get(key)) {
            if (auto u = detail::parse_u64(*v))
                into = static_cast<std::size_t>(*u);
            else
                errors.push_back(key + ": expected a nonnegative integer, got '" + *v + "'");
        }
    };
    auto read_double = [&](const std::string& key, double& into) {
        if (const auto* v = get(key)) {
            if (auto x = detail::parse_double(*v))
                into = *x;
            else
                errors.push_back(key + ": expected a number, got '" + *v + "'");
        }
    };
    auto read_string = [&](const std::string& key, std::string& into) {
        if (const auto* v = get(key)) into = *v;
    };

    if (const auto* v = get("protocol")) {
        if (auto p = parse_protocol(*v))
            cfg.protocol = *p;
        else
            errors.push_back("protocol: unknown protocol '" + *v + "'");
    } else {
        errors.push_back("protocol: missing");
    }
    if (const auto* v = get("generator")) {
        if (*v == "random-uniform")
            cfg.generator = Generator::RandomUniform;
        else if (*v == "random-gaussian")
            cfg.generator = Generator::RandomGaussian;
        else if (*v == "file")
            cfg.generator = Generator::File;
        else
            errors.push_back("generator: expected random-uniform, random-gaussian or file, got '" + *v + "'");
    }
    read_size("n", cfg.n);
    read_size("s", cfg.s);
    read_size("d", cfg.d);
    read_double("k", cfg.k);
    read_double("p", cfg.p);
    read_double("eps", cfg.eps);
    read_double("delta", cfg.delta);
    read_size("radius", cfg.radius);
    read_size("t", cfg.t);
    read_size("rows", cfg.rows);
    read_string("fn", cfg.fn);
    read_string("graph", cfg.graph);
    read_double("noise", cfg.noise);
    read_size("trials", cfg.trials);
    read_size("jobs", cfg.jobs);
    read_string("input", cfg.input);
    read_string("edges", cfg.edges);
    read_string("manifest", cfg.manifest);
    read_double("sample_const", cfg.sample_const);
    read_double("heavy_const", cfg.heavy_const);
    read_double("sketch_const", cfg.sketch_const);
    read_double("sign_const", cfg.sign_const);
    read_double("delta_budget", cfg.delta_budget);
    if (const auto* v = get("truth")) {
        if (*v == "true" || *v == "1")
            cfg.truth = true;
        else if (*v == "false" || *v == "0")
            cfg.truth = false;
        else
            errors.push_back("truth: expected true or false, got '" + *v + "'");
    }
    if (const auto* v = get("backend")) {
        if (*v == "full")
            cfg.backend = ExpBackend::FullRandom;
        else if (*v == "nisan")
            cfg.backend = ExpBackend::NisanPrg;
        else
            errors.push_back("backend: expected full or nisan, got '" + *v + "'");
    }
    if (const auto* v = get("seeds")) {
        cfg.seeds.clear();
        std::istringstream ss(*v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item.erase(0, item.find_first_not_of(" \t"));
            item.erase(item.find_last_not_of(" \t") + 1);
            if (auto u = parse_seed(item))
                cfg.seeds.push_back(*u);
            else
                errors.push_back("seeds: bad seed '" + item + "'");
        }
        if (cfg.seeds.empty()) errors.push_back("seeds: at least one seed required");
    }
    for (const auto& [key, value] : raw)
        if (!seen[key]) errors.push_back(key + ": unknown key");

    const Protocol P = cfg.protocol;
    const bool sketchy = P == Protocol::Embed || P == Protocol::Regress || P == Protocol::Lra || P == Protocol::Congest;
    if (cfg.trials < 1) errors.push_back("trials: must be at least 1");
    if (cfg.jobs < 1) errors.push_back("jobs: must be at least 1");
    if (P == Protocol::Sample) {
        if (!(cfg.eps > 0.0 && cfg.eps < 0.25)) errors.push_back("eps out of range: sample needs 0 < eps < 1/4");
    } else if (P == Protocol::Congest) {
        if (!(cfg.eps > 0.0 && cfg.eps < 1.0)) errors.push_back("eps out of range: need 0 < eps < 1");
        else if (cfg.radius > 0 && !(cfg.eps < 1.0 / static_cast<double>(cfg.radius)))
            errors.push_back("eps out of range: congest needs eps < 1/radius");
    } else if (!(cfg.eps > 0.0 && cfg.eps < 1.0)) {
        errors.push_back("eps out of range: need 0 < eps < 1");
    }
    if (sketchy && !(cfg.delta > 0.0 && cfg.delta < 1.0)) errors.push_back("delta out of range: need 0 < delta < 1");
    if (!(cfg.p >= 1.0)) errors.push_back("p: must be at least 1");
    if (cfg.s < 1) errors.push_back("s: must be at least 1");
    if (cfg.n < 1 && cfg.generator != Generator::File) errors.push_back("n: must be at least 1");
    if (!(cfg.sample_const > 0.0)) errors.push_back("sample_const: must be positive");
    if (!(cfg.heavy_const > 0.0)) errors.push_back("heavy_const: must be positive");
    if (!(cfg.sketch_const > 0.0)) errors.push_back("sketch_const: must be positive");
    if (!(cfg.sign_const > 0.0)) errors.push_back("sign_const: must be positive");
    if (P == Protocol::Fk && !(cfg.k >= 1.0)) errors.push_back("k: moment order must be at least 1");
    if (P == Protocol::Hoc || P == Protocol::Lra) {
        if (!(cfg.k >= 1.0) || cfg.k != std::floor(cfg.k)) errors.push_back("k: must be a positive integer");
        else if (P == Protocol::Hoc && cfg.k > static_cast<double>(cfg.n)) errors.push_back("k: tuple order exceeds n");
        else if (P == Protocol::Lra && cfg.k > static_cast<double>(cfg.d)) errors.push_back("k: rank exceeds d");
    }
    if (P == Protocol::Regress && cfg.d < 2) errors.push_back("d: regression needs at least 2 columns");
    if ((P == Protocol::Embed || P == Protocol::Regress || P == Protocol::Lra || P == Protocol::Congest) && cfg.d < 1)
        errors.push_back("d: must be at least 1");
    if (P == Protocol::Lra && cfg.p != 2.0) errors.push_back("p: low-rank approximation uses p = 2");
    if (P == Protocol::Congest) {
        if (cfg.radius < 1) errors.push_back("radius: must be at least 1");
        if (cfg.t != 0 && cfg.t <= cfg.radius)
            errors.push_back("t: merge budget rule violated, congest needs t >= radius + 1");
        if (cfg.generator == Generator::File && (cfg.edges.empty() || cfg.manifest.empty()))
            errors.push_back("edges/manifest: file-backed congest needs both");
    } else if (cfg.generator == Generator::File && cfg.input.empty()) {
        errors.push_back("input: generator=file needs an input path");
    }
    if (!cfg.fn.empty()) {
        try {
            parse_fn(cfg.fn);
        } catch (const std::exception& e) {
            errors.push_back(std::string("fn: ") + e.what());
        }
    }
    if (errors.empty()) res.config = cfg;
    return res;
}

inline ConfigResult validate_config(const std::string& raw_text) {
    std::vector<std::string> errors;
    ConfigMap raw = parse_config_text(raw_text, &errors);
    ConfigResult res = validate_config(raw);
    if (!errors.empty()) {
        res.config.reset();
        res.errors.insert(res.errors.begin(), errors.begin(), errors.end());
    }
    return res;
}

struct TrialRow {
    std::uint64_t seed = 0;
    std::size_t trial = 0;
    std::string outcome = "ok"; // sampler outcome, or "error"
    long long index = -1;       // sampled coordinate; -1 when not applicable
    double estimate = std::nan("");
    double truth = std::nan("");
    double rel_error = std::nan("");
    bool success = false;
    int rounds = 0;
    std::uint64_t words = 0;
    std::string error;

    bool operator==(const TrialRow& o) const {
        auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
        return seed == o.seed && trial == o.trial && outcome == o.outcome && index == o.index && same(estimate, o.estimate) && same(truth, o.truth) &&
               same(rel_error, o.rel_error) && success == o.success && rounds == o.rounds && words == o.words &&
               error == o.error;
    }
};

struct Summary {
    std::size_t trials = 0;
    std::size_t errors = 0;
    std::size_t successes = 0;
    double success_frac = 0.0;
    std::uint64_t words_total = 0;
    double words_mean = 0.0;
};

struct ResultTable {
    static constexpr const char* kHeader =
        "kind,protocol,seed,trial,outcome,index,estimate,truth,rel_error,success,rounds,words,error";

    std::string protocol;
    std::vector<TrialRow> rows;

    Summary summary() const {
        Summary s;
        s.trials = rows.size();
        for (const auto& r : rows) {
            if (!r.error.empty()) ++s.errors;
            if (r.success) ++s.successes;
            s.words_total += r.words;
        }
        if (s.trials > 0) {
            s.success_frac = static_cast<double>(s.successes) / static_cast<double>(s.trials);
            s.words_mean = static_cast<double>(s.words_total) / static_cast<double>(s.trials);
        }
        return s;
    }

    /// One "trial" row per run and a closing "summary" row whose success
    /// column is the success fraction and whose words column is the total.
    void write_csv(std::ostream& os) const {
        os << kHeader << '\n';
        for (const auto& r : rows) {
            os << "trial," << protocol << ',' << r.seed << ',' << r.trial << ',' << r.outcome << ','
               << (r.index < 0 ? std::string() : std::to_string(r.index)) << ',' << detail::format_double(r.estimate)
               << ',' << detail::format_double(r.truth) << ',' << detail::format_double(r.rel_error) << ','
               << (r.success ? 1 : 0) << ',' << r.rounds << ',' << r.words << ',' << sanitize(r.error) << '\n';
        }
        Summary s = summary();
        os << "summary," << protocol << ",," << s.trials << ",,,,,," << detail::format_double(s.success_frac) << ",,"
           << s.words_total << ',' << s.errors << '\n';
    }

    static ResultTable read_csv(std::istream& is) {
        ResultTable t;
        std::string line;
        std::getline(is, line);
        if (line != kHeader)
            throw std::runtime_error("result csv: unexpected header");
        auto num = [](const std::string& f) { return f.empty() ? std::nan("") : *detail::parse_double(f); };
        bool saw_summary = false;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::string cur;
            std::istringstream ss(line);
            while (std::getline(ss, cur, ',')) f.push_back(cur);
            if (!line.empty() && line.back() == ',') f.emplace_back();
            if (f.size() != 13) throw std::runtime_error("result csv: malformed row '" + line + "'");
            t.protocol = f[1];
            if (f[0] == "summary") {
                Summary s = t.summary();
                if (std::to_string(s.trials) != f[3] || std::to_string(s.words_total) != f[11])
                    throw std::runtime_error("result csv: summary row disagrees with trial rows");
                saw_summary = true;
                continue;
            }
            if (f[0] != "trial") throw std::runtime_error("result csv: unknown row kind '" + f[0] + "'");
            TrialRow r;
            r.seed = *detail::parse_u64(f[2]);
            r.trial = static_cast<std::size_t>(*detail::parse_u64(f[3]));
            r.outcome = f[4];
            r.index = f[5].empty() ? -1 : std::stoll(f[5]);
            r.estimate = num(f[6]);
            r.truth = num(f[7]);
            r.rel_error = num(f[8]);
            r.success = f[9] == "1";
            r.rounds = std::stoi(f[10]);
            r.words = *detail::parse_u64(f[11]);
            r.error = f[12];
            t.rows.push_back(std::move(r));
        }
        if (!saw_summary) throw std::runtime_error("result csv: missing summary row");
        return t;
    }

private:
    static std::string sanitize(std::string s) {
        for (auto& c : s)
            if (c == ',' || c == '\n' || c == '\r') c = ';';
        return s;
    }
};

/// One summary per swept value of a single config key.
struct SweepTable {
    static constexpr const char* kHeader = "param,value,trials,errors,success_frac,words_total,words_mean";

    struct Point {
        std::string value;
        Summary summary;
    };

    std::string param;
    std::vector<Point> points;

    void write_csv(std::ostream& os) const {
        os << kHeader << '\n';
        for (const auto& p : points) {
            const Summary& s = p.summary;
            os << param << ',' << p.value << ',' << s.trials << ',' << s.errors << ','
               << detail::format_double(s.success_frac) << ',' << s.words_total << ','
               << detail::format_double(s.words_mean) << '\n';
        }
    }

    static SweepTable read_csv(std::istream& is) {
        SweepTable t;
        std::string line;
        std::getline(is, line);
        if (line != kHeader) throw std::runtime_error("sweep csv: unexpected header");
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::string cur;
            std::istringstream ss(line);
            while (std::getline(ss, cur, ',')) f.push_back(cur);
            auto u64 = [&](const std::string& x) {
                auto v = detail::parse_u64(x);
                if (!v) throw std::runtime_error("sweep csv: malformed row '" + line + "'");
                return *v;
            };
            auto real = [&](const std::string& x) {
                auto v = detail::parse_double(x);
                if (!v) throw std::runtime_error("sweep csv: malformed row '" + line + "'");
                return *v;
            };
            if (f.size() != 7) throw std::runtime_error("sweep csv: malformed row '" + line + "'");
            t.param = f[0];
            Point p;
            p.value = f[1];
            p.summary.trials = static_cast<std::size_t>(u64(f[2]));
            p.summary.errors = static_cast<std::size_t>(u64(f[3]));
            p.summary.success_frac = real(f[4]);
            p.summary.words_total = u64(f[5]);
            p.summary.words_mean = real(f[6]);
            p.summary.successes =
                static_cast<std::size_t>(std::llround(p.summary.success_frac * static_cast<double>(p.summary.trials)));
            t.points.push_back(std::move(p));
        }
        return t;
    }
};

// ---- instance generation -------------------------------------------------

inline double draw_entry(Rng& rng, Generator g) {
    if (g == Generator::RandomGaussian) return std::abs(std::normal_distribution<double>(0.0, 1.0)(rng));
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// s nonnegative n-vectors.
inline std::vector<ServerVector> random_servers(std::size_t n, std::size_t s, Generator g, Rng& rng) {
    std::vector<ServerVector> out(s);
    for (std::size_t j = 0; j < s; ++j) {
        out[j].owner = j;
        out[j].entries.resize(n);
        for (auto& v : out[j].entries) v = draw_entry(rng, g);
    }
    return out;
}

inline Eigen::MatrixXd gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd A(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index c = 0; c < A.cols(); ++c)
        for (Eigen::Index r = 0; r < A.rows(); ++r) A(r, c) = normal(rng);
    return A;
}

/// Features from the generator, label = features * beta + noise.
inline Eigen::MatrixXd regression_matrix(std::size_t rows, std::size_t cols, double noise, Rng& rng) {
    Eigen::MatrixXd A = gaussian_matrix(rows, cols, rng);
    Eigen::VectorXd beta = gaussian_matrix(cols - 1, 1, rng);
    std::normal_distribution<double> normal(0.0, noise);
    for (Eigen::Index r = 0; r < A.rows(); ++r)
        A(r, A.cols() - 1) = A.row(r).head(A.cols() - 1).dot(beta) + normal(rng);
    return A;
}

/// Rank-k signal plus entrywise Gaussian noise.
inline Eigen::MatrixXd low_rank_matrix(std::size_t rows, std::size_t cols, std::size_t rank, double noise, Rng& rng) {
    Eigen::MatrixXd A = gaussian_matrix(rows, rank, rng) * gaussian_matrix(rank, cols, rng);
    return A + noise * gaussian_matrix(rows, cols, rng);
}

/// max |lambda - 1| over the generalized eigenvalues of (M^T M, A^T A) on the row space of A.
inline double l2_distortion(const Eigen::MatrixXd& A, const Eigen::MatrixXd& M) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > 1e-10 * sv(0)) ++rank;
    if (rank == 0) return M.rows() == 0 || M.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    // Whitened coordinates: x = V S^-1 y gives ||A x|| = ||y||.
    Eigen::MatrixXd W = svd.matrixV().leftCols(rank) * sv.head(rank).cwiseInverse().asDiagonal();
    Eigen::MatrixXd G = M.rows() == 0 ? Eigen::MatrixXd::Zero(rank, rank) : Eigen::MatrixXd((M * W).transpose() * (M * W));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    const auto& ev = eig.eigenvalues();
    return std::max(std::abs(ev(0) - 1.0), std::abs(ev(ev.size() - 1) - 1.0));
}

/// max |ratio - 1| of ||M x||_p^p / ||A x||_p^p over random Gaussian probes.
inline double probe_distortion(const Eigen::MatrixXd& A, const Eigen::MatrixXd& M, double p, std::size_t probes,
                               Rng& rng) {
    double worst = 0.0;
    for (std::size_t q = 0; q < probes; ++q) {
        Eigen::VectorXd x = gaussian_matrix(static_cast<std::size_t>(A.cols()), 1, rng);
        double a = lp_norm_pow(A * x, p);
        double m = M.rows() == 0 ? 0.0 : lp_norm_pow(M * x, p);
        if (a > 0.0) worst = std::max(worst, std::abs(m / a - 1.0));
    }
    return worst;
}

namespace detail {

inline std::vector<ServerVector> load_servers(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    Dataset ds = Dataset::read_csv(in);
    std::vector<ServerVector> out;
    for (const auto& [key, row] : ds.rows()) out.push_back({out.size(), row});
    return out;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return Dataset::read_csv(in);
}

inline Graph make_graph(const std::string& desc) {
    auto colon = desc.find(':');
    std::string kind = desc.substr(0, colon);
    std::string arg = colon == std::string::npos ? "" : desc.substr(colon + 1);
    if (kind == "grid") {
        auto x = arg.find('x');
        if (x == std::string::npos) throw std::invalid_argument("graph: grid needs RxC");
        return Graph::grid(std::stoul(arg.substr(0, x)), std::stoul(arg.substr(x + 1)));
    }
    if (kind == "path") return Graph::path(std::stoul(arg));
    if (kind == "star") return Graph::star(std::stoul(arg));
    throw std::invalid_argument("graph: unknown kind '" + kind + "'");
}

inline void set_relative(TrialRow& row) {
    if (!std::isnan(row.truth) && row.truth != 0.0) row.rel_error = std::abs(row.estimate - row.truth) / std::abs(row.truth);
}

inline TrialRow run_trial(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t trial) {
    TrialRow row;
    row.seed = seed;
    row.trial = trial;
    const std::uint64_t trial_seed = derive_seed(seed, {static_cast<std::uint64_t>(trial)});
    Rng rng = make_rng(trial_seed, {0xda});
    const std::uint64_t run_seed = derive_seed(trial_seed, {0x9c});
    const bool file = cfg.generator == Generator::File;
    const bool want_truth = !file || cfg.truth;
    FsumOptions fopts;
    fopts.sample_const = cfg.sample_const;
    fopts.heavy_const = cfg.heavy_const;
    fopts.backend = cfg.backend;

    switch (cfg.protocol) {
        case Protocol::Sample: {
            auto servers = file ? load_servers(cfg.input) : random_servers(cfg.n, cfg.s, cfg.generator, rng);
            AdditiveSamplerConfig sc;
            sc.eps = cfg.eps;
            auto [res, stats] = sample_additive(servers, sc, run_seed);
            row.rounds = stats.rounds_used();
            row.words = stats.total();
            row.outcome = to_string(res.outcome);
            if (!res.ok()) {
                row.success = false;
                break;
            }
            row.estimate = res.q_hat;
            row.index = static_cast<long long>(res.index);
            if (want_truth) {
                double total = 0.0, qi = 0.0;
                for (const auto& sv : servers)
                    for (std::size_t i = 0; i < sv.entries.size(); ++i) {
                        total += sv.entries[i];
                        if (i == res.index) qi += sv.entries[i];
                    }
                row.truth = qi / total;
                set_relative(row);
                row.success = row.estimate >= row.truth / 2.0 && row.estimate <= 2.0 * row.truth;
            } else {
                row.success = true;
            }
            break;
        }
        case Protocol::Fsum:
        case Protocol::Fk: {
            auto servers = file ? load_servers(cfg.input) : random_servers(cfg.n, cfg.s, cfg.generator, rng);
            FnSpec fn = cfg.protocol == Protocol::Fk ? power_fn(cfg.k) : parse_fn(cfg.fn.empty() ? "pow:2" : cfg.fn);
            auto res = fsum_estimate(servers, fn, cfg.eps, run_seed, fopts);
            row.estimate = res.estimate;
            row.rounds = res.stats.rounds_used();
            row.words = res.stats.total();
            if (want_truth) {
                row.truth = fsum_exact(servers, fn);
                set_relative(row);
                row.success = row.rel_error <= cfg.eps;
            } else {
                row.success = true;
            }
            break;
        }
        case Protocol::Hoc: {
            std::vector<TupleServer> servers(cfg.s);
            if (file) {
                // keys "server/row": the part before '/' names the server
                Dataset ds = load_dataset(cfg.input);
                std::map<std::string, std::size_t> ids;
                servers.clear();
                for (const auto& [key, val] : ds.rows()) {
                    std::string owner = key.substr(0, key.find('/'));
                    auto [it, fresh] = ids.try_emplace(owner, servers.size());
                    if (fresh) servers.emplace_back();
                    servers[it->second].rows.push_back(val);
                }
            } else {
                std::size_t per = cfg.rows == 0 ? 4 : cfg.rows;
                for (auto& sv : servers)
                    for (std::size_t r = 0; r < per; ++r) {
                        std::vector<double> v(cfg.n);
                        for (auto& x : v) x = draw_entry(rng, cfg.generator);
                        sv.rows.push_back(std::move(v));
                    }
            }
            FnSpec fn = parse_fn(cfg.fn.empty() ? "pow:2" : cfg.fn);
            TupleFn g = [](std::span<const double> a) {
                double prod = 1.0;
                for (double x : a) prod *= x;
                return prod;
            };
            HocOptions hopts;
            hopts.fsum = fopts;
            auto k = static_cast<std::size_t>(cfg.k);
            auto res = higher_order_correlation(servers, fn, g, k, cfg.eps, run_seed, hopts);
            row.estimate = res.estimate;
            row.rounds = res.stats.rounds_used();
            row.words = res.stats.total();
            if (want_truth) {
                row.truth = higher_order_exact(servers, fn, g, k);
                set_relative(row);
                row.success = row.rel_error <= cfg.eps;
            } else {
                row.success = true;
            }
            break;
        }
        case Protocol::Embed:
        case Protocol::Regress: {
            Dataset ds = file ? load_dataset(cfg.input)
                              : Dataset::from_matrix(cfg.protocol == Protocol::Regress
                                                         ? regression_matrix(cfg.n, cfg.d, cfg.noise, rng)
                                                         : gaussian_matrix(cfg.n, cfg.d, rng));
            SketchParams sp{.p = cfg.p, .eps = cfg.eps, .delta = cfg.delta, .sketch_const = cfg.sketch_const,
                            .salt = run_seed};
            Sketch sk = create_sketch(ds, 1, sp);
            row.words = sketch_words(sk);
            Eigen::MatrixXd A = ds.matrix();
            if (cfg.protocol == Protocol::Embed) {
                Eigen::MatrixXd M = solve_embedding(sk);
                row.estimate = cfg.p == 2.0 ? l2_distortion(A, M) : probe_distortion(A, M, cfg.p, 200, rng);
                row.truth = 0.0;
                row.rel_error = row.estimate;
                row.success = row.estimate <= cfg.eps;
            } else {
                auto fit = solve_regression(sk);
                row.estimate = regression_cost(A, fit.coef, cfg.p);
                if (want_truth) {
                    auto best = regress_rows(A, cfg.p);
                    row.truth = regression_cost(A, best.coef, cfg.p);
                    set_relative(row);
                    row.success = row.estimate <= (1.0 + 3.0 * cfg.eps) * row.truth + 1e-12;
                } else {
                    row.success = true;
                }
            }
            break;
        }
        case Protocol::Lra: {
            auto k = static_cast<std::size_t>(cfg.k);
            Dataset ds = file ? load_dataset(cfg.input)
                              : Dataset::from_matrix(low_rank_matrix(cfg.n, cfg.d, k, cfg.noise, rng));
            LraOptions lo{.sign_const = cfg.sign_const, .sketch_const = cfg.sketch_const};
            auto res = solve_lra(ds, k, cfg.eps, cfg.delta, run_seed, lo);
            Eigen::MatrixXd A = ds.matrix();
            row.estimate = projection_residual(A, res.basis);
            row.words = res.sketch_rows * (res.m + ds.d() + 2);
            if (want_truth) {
                row.truth = svd_residual(A, k);
                set_relative(row);
                row.success = row.estimate <= (1.0 + 3.0 * cfg.eps) * row.truth + 1e-9 * A.squaredNorm();
            } else {
                row.success = true;
            }
            break;
        }
        case Protocol::Congest: {
            Graph g;
            if (file) {
                std::ifstream edges(cfg.edges), manifest(cfg.manifest);
                if (!edges) throw std::runtime_error("cannot open " + cfg.edges);
                if (!manifest) throw std::runtime_error("cannot open " + cfg.manifest);
                g.read_edges(edges);
                g.read_manifest(manifest, std::filesystem::path(cfg.manifest).parent_path());
            } else {
                g = make_graph(cfg.graph);
                std::size_t per = cfg.rows == 0 ? 40 : cfg.rows;
                for (std::size_t u = 0; u < g.size(); ++u)
                    g.data(u) = Dataset::from_matrix(gaussian_matrix(per, cfg.d, rng), "n" + g.id(u) + "_r");
            }
            double delta = cfg.delta_budget > 0.0 ? cfg.delta_budget : propagation_delta(g.size(), cfg.radius);
            SketchParams sp{.p = cfg.p, .eps = cfg.eps, .delta = delta, .sketch_const = cfg.sketch_const,
                            .salt = run_seed};
            PropagateOptions po;
            po.t = cfg.t;
            auto res = propagate(g, cfg.radius, sp, po);
            row.rounds = res.stats.rounds_used();
            row.words = res.stats.total();
            std::size_t good = 0;
            for (std::size_t u = 0; u < g.size(); ++u) {
                if (res.attempt_used[u] < 0) continue;
                Eigen::MatrixXd A = g.ball_union(u, cfg.radius).matrix();
                double dist = cfg.p == 2.0 ? l2_distortion(A, res.embeddings[u])
                                           : probe_distortion(A, res.embeddings[u], cfg.p, 200, rng);
                if (dist <= cfg.eps) ++good;
            }
            row.estimate = static_cast<double>(good) / static_cast<double>(g.size());
            row.truth = 1.0;
            row.success = row.estimate >= 0.9;
            break;
        }
    }
    return row;
}

} // namespace detail

/// Runs cfg.trials trials for every seed, up to `jobs` at a time. Protocol
/// errors land in the row's error column; rows are ordered by (seed, trial).
inline ResultTable run_experiment(const ExperimentConfig& cfg) {
    ResultTable table;
    table.protocol = to_string(cfg.protocol);
    std::vector<std::pair<std::uint64_t, std::size_t>> work;
    for (auto seed : cfg.seeds)
        for (std::size_t t = 0; t < cfg.trials; ++t) work.emplace_back(seed, t);
    table.rows.resize(work.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) {
            try {
                table.rows[i] = detail::run_trial(cfg, work[i].first, work[i].second);
            } catch (const std::exception& e) {
                TrialRow r;
                r.seed = work[i].first;
                r.trial = work[i].second;
                r.outcome = "error";
                r.error = e.what();
                table.rows[i] = std::move(r);
            }
        }
    };
    std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, work.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return table;
}

} // namespace coordsketch

namespace coordsketch {

struct SweepResult {
    std::optional<SweepTable> table;
    std::vector<std::string> errors;
};

/// Validates every point first; runs nothing unless all of them pass.
inline SweepResult run_sweep(const ConfigMap& raw, const std::string& param, const std::vector<std::string>& values) {
    SweepResult res;
    std::vector<ExperimentConfig> configs;
    if (values.empty()) res.errors.push_back(param + ": sweep needs at least one value");
    for (const auto& v : values) {
        ConfigMap point = raw;
        point[param] = v;
        ConfigResult cr = validate_config(point);
        for (const auto& e : cr.errors) res.errors.push_back(param + "=" + v + ": " + e);
        if (cr.ok()) configs.push_back(*cr.config);
    }
    if (!res.errors.empty()) return res;
    SweepTable table;
    table.param = param;
    for (std::size_t i = 0; i < configs.size(); ++i) table.points.push_back({values[i], run_experiment(configs[i]).summary()});
    res.table = std::move(table);
    return res;
}

} // namespace coordsketch
