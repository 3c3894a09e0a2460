#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "coordsketch/comm.hpp"
#include "coordsketch/dataset.hpp"
#include "coordsketch/errors.hpp"
#include "coordsketch/random.hpp"
#include "coordsketch/sketch.hpp"

namespace coordsketch {

/// Undirected graph whose nodes hold datasets.
class Graph {
public:
    std::size_t add_node(const std::string& id, Dataset data = {}) {
        auto [it, fresh] = index_.try_emplace(id, ids_.size());
        if (!fresh) throw std::invalid_argument("graph: duplicate node '" + id + "'");
        ids_.push_back(id);
        data_.push_back(std::move(data));
        adj_.emplace_back();
        return it->second;
    }

    void add_edge(std::size_t u, std::size_t v) {
        if (u >= size() || v >= size()) throw std::out_of_range("graph: edge endpoint out of range");
        if (u == v) return;
        if (std::find(adj_[u].begin(), adj_[u].end(), v) != adj_[u].end()) return;
        adj_[u].push_back(v);
        adj_[v].push_back(u);
        std::sort(adj_[u].begin(), adj_[u].end());
        std::sort(adj_[v].begin(), adj_[v].end());
    }

    std::size_t size() const noexcept { return ids_.size(); }
    const std::string& id(std::size_t u) const { return ids_.at(u); }
    std::size_t find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw std::out_of_range("graph: unknown node '" + id + "'");
        return it->second;
    }
    bool has(const std::string& id) const { return index_.count(id) > 0; }
    const std::vector<std::size_t>& neighbors(std::size_t u) const { return adj_.at(u); }
    Dataset& data(std::size_t u) { return data_.at(u); }
    const Dataset& data(std::size_t u) const { return data_.at(u); }

    /// Nodes within `radius` hops of u, ascending.
    std::vector<std::size_t> ball(std::size_t u, std::size_t radius) const {
        std::vector<std::size_t> dist(size(), SIZE_MAX);
        std::deque<std::size_t> queue{u};
        dist[u] = 0;
        while (!queue.empty()) {
            std::size_t v = queue.front();
            queue.pop_front();
            if (dist[v] == radius) continue;
            for (auto w : adj_[v])
                if (dist[w] == SIZE_MAX) {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
        }
        std::vector<std::size_t> out;
        for (std::size_t v = 0; v < size(); ++v)
            if (dist[v] != SIZE_MAX) out.push_back(v);
        return out;
    }

    Dataset ball_union(std::size_t u, std::size_t radius) const {
        Dataset out;
        for (auto v : ball(u, radius)) out.merge(data_[v]);
        return out;
    }

    static Graph grid(std::size_t rows, std::size_t cols) {
        Graph g;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g.add_node(std::to_string(r * cols + c));
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                if (c + 1 < cols) g.add_edge(r * cols + c, r * cols + c + 1);
                if (r + 1 < rows) g.add_edge(r * cols + c, (r + 1) * cols + c);
            }
        return g;
    }

    static Graph path(std::size_t n) {
        Graph g;
        for (std::size_t u = 0; u < n; ++u) g.add_node(std::to_string(u));
        for (std::size_t u = 0; u + 1 < n; ++u) g.add_edge(u, u + 1);
        return g;
    }

    /// Node 0 is the center.
    static Graph star(std::size_t leaves) {
        Graph g;
        for (std::size_t u = 0; u <= leaves; ++u) g.add_node(std::to_string(u));
        for (std::size_t u = 1; u <= leaves; ++u) g.add_edge(0, u);
        return g;
    }

    /// Lines "u v"; blank lines and lines starting with '#' are skipped.
    /// Unknown endpoints become new nodes.
    void read_edges(std::istream& is) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            std::string a, b;
            if (!(ss >> a >> b)) throw std::runtime_error("edge list: line " + std::to_string(line_no) + " needs two ids");
            std::size_t u = has(a) ? find(a) : add_node(a);
            std::size_t v = has(b) ? find(b) : add_node(b);
            add_edge(u, v);
        }
    }

    /// Manifest lines "node path/to/data.csv"; relative paths resolve against `base`.
    void read_manifest(std::istream& is, const std::filesystem::path& base = {}) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            std::string node, file;
            if (!(ss >> node >> file)) throw std::runtime_error("manifest: line " + std::to_string(line_no) + " needs node and path");
            std::filesystem::path path(file);
            if (path.is_relative()) path = base / path;
            std::ifstream in(path);
            if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
            std::size_t u = has(node) ? find(node) : add_node(node);
            data_[u] = Dataset::read_csv(in);
        }
    }

private:
    std::vector<std::string> ids_;
    std::map<std::string, std::size_t> index_;
    std::vector<Dataset> data_;
    std::vector<std::vector<std::size_t>> adj_;
};

struct PropagateOptions {
    std::size_t t = 0;           // merge budget; 0 means radius + 1
    int max_attempts = 4;        // runs with fresh salts for nodes whose merges failed
    /// Called once per delivered message; a node broadcasts one byte string per round.
    std::function<void(int round, std::size_t from, std::size_t to, const std::string& bytes)> on_message;
};

struct NodeTraffic {
    std::size_t node = 0;
    int round = 0;
    std::size_t rows_sent = 0; // entries in the broadcast sketch
    std::uint64_t words = 0;   // summed over all receiving neighbors
};

struct PropagationResult {
    std::vector<Eigen::MatrixXd> embeddings; // per node, for its radius-ball union
    std::vector<int> attempt_used;           // 0-based run that produced each node's embedding; -1 if none did
    std::vector<NodeTraffic> traffic;
    CommStats stats;
    int attempts = 0;

    bool complete() const {
        return std::all_of(attempt_used.begin(), attempt_used.end(), [](int a) { return a >= 0; });
    }
};

/// delta = 1/(10 s) (2 s)^-radius: union bound over all merges in a run.
inline double propagation_delta(std::size_t nodes, std::size_t radius) {
    double s = static_cast<double>(std::max<std::size_t>(nodes, 1));
    return 1.0 / (10.0 * s) * std::pow(2.0 * s, -static_cast<double>(radius));
}

inline void write_traffic_csv(std::ostream& os, const std::vector<NodeTraffic>& rows) {
    os << "node,round,rows_sent,words\n";
    for (const auto& r : rows) os << r.node << ',' << r.round << ',' << r.rows_sent << ',' << r.words << '\n';
}

inline std::vector<NodeTraffic> read_traffic_csv(std::istream& is) {
    std::string line;
    std::getline(is, line);
    if (line != "node,round,rows_sent,words") throw std::runtime_error("traffic csv: unexpected header '" + line + "'");
    std::vector<NodeTraffic> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        NodeTraffic r;
        char c1, c2, c3;
        if (!(ss >> r.node >> c1 >> r.round >> c2 >> r.rows_sent >> c3 >> r.words) || c1 != ',' || c2 != ',' || c3 != ',')
            throw std::runtime_error("traffic csv: malformed row '" + line + "'");
        out.push_back(r);
    }
    return out;
}

namespace detail {

/// One lock-step run. Round i: every node broadcasts sk(S^{i-1}) and merges
/// what its neighbors sent into sk(S^i). A failed merge taints the node from
/// that round on, and a node hearing from a tainted neighbor is tainted too.
inline void propagate_once(const Graph& g, std::size_t radius, std::size_t t, std::size_t d, const SketchParams& sp,
                           int attempt, const PropagateOptions& opts, PropagationResult& res) {
    const std::size_t V = g.size();
    std::vector<std::vector<Sketch>> chain(V);
    std::vector<bool> tainted(V, false);
    for (std::size_t u = 0; u < V; ++u)
        chain[u].push_back(create_sketch(g.data(u).empty() ? Dataset(d) : g.data(u), t, sp));

    const int round_offset = attempt * static_cast<int>(radius);
    for (std::size_t i = 1; i <= radius; ++i) {
        const int round = round_offset + static_cast<int>(i);
        std::vector<std::string> outbox(V);
        for (std::size_t u = 0; u < V; ++u) {
            if (tainted[u] || g.neighbors(u).empty()) continue;
            const Sketch& sk = chain[u].back();
            outbox[u] = serialize(sk);
            std::uint64_t w = sketch_words(sk) * g.neighbors(u).size();
            res.traffic.push_back({u, round, sk.entry_count(), w});
            res.stats.charge(node_entity(u), round, w);
        }
        res.stats.note_round(round);
        std::vector<bool> next_taint = tainted;
        for (std::size_t u = 0; u < V; ++u) {
            if (tainted[u]) continue;
            std::vector<Sketch> inbox;
            for (auto v : g.neighbors(u)) {
                if (tainted[v]) {
                    next_taint[u] = true;
                    break;
                }
                if (opts.on_message) opts.on_message(round, v, u, outbox[v]);
                inbox.push_back(deserialize(outbox[v]));
            }
            if (next_taint[u]) continue;
            if (inbox.empty()) {
                Sketch empty = chain[u].back();
                empty.t -= 1;
                empty.samples.pop_back();
                for (auto& s : empty.samples) s.entries.clear();
                chain[u].push_back(std::move(empty));
                continue;
            }
            try {
                chain[u].push_back(merge_sketches(inbox));
            } catch (const MergeFailure&) {
                next_taint[u] = true;
            }
        }
        tainted = std::move(next_taint);
    }
    for (std::size_t u = 0; u < V; ++u) {
        if (tainted[u] || res.attempt_used[u] >= 0) continue;
        res.embeddings[u] = solve_union_embedding(chain[u]);
        res.attempt_used[u] = attempt;
    }
}

} // namespace detail

/// Every node ends with an embedding of the data within `radius` hops. The
/// final step pools the chain sk(S^0), ..., sk(S^radius) at hash index 1 and
/// spends no merge budget; t >= radius + 1 keeps the last round's merge legal.
inline PropagationResult propagate(const Graph& g, std::size_t radius, const SketchParams& sp,
                                   const PropagateOptions& opts = {}) {
    validate(sp);
    const std::size_t t = opts.t == 0 ? radius + 1 : opts.t;
    if (t < radius + 1)
        throw BudgetViolation("propagate: merge budget t = " + std::to_string(t) + " must be at least radius + 1 = " +
                              std::to_string(radius + 1));
    if (radius > 0 && !(sp.eps < 1.0 / static_cast<double>(radius)))
        throw std::invalid_argument("propagate: eps must be below 1/radius");
    if (opts.max_attempts < 1) throw std::invalid_argument("propagate: need at least one attempt");
    std::size_t d = 0;
    {
        std::vector<Dataset> all;
        for (std::size_t u = 0; u < g.size(); ++u) all.push_back(g.data(u));
        d = Dataset::conforming_union(all).d();
    }
    PropagationResult res;
    res.embeddings.resize(g.size());
    res.attempt_used.assign(g.size(), -1);
    for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
        SketchParams run = sp;
        if (attempt > 0) run.salt = derive_seed(sp.salt, {0xc6, static_cast<std::uint64_t>(attempt)});
        detail::propagate_once(g, radius, t, d, run, attempt, opts, res);
        res.attempts = attempt + 1;
        if (res.complete()) break;
    }
    return res;
}

} // namespace coordsketch
