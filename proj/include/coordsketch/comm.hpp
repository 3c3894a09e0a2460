#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "coordsketch/errors.hpp"

namespace coordsketch {

inline constexpr int kBitsPerWord = 64;

/// Word costs of serialized message fields.
namespace words {
inline constexpr std::uint64_t kReal = 1;
inline constexpr std::uint64_t kIndex = 1;
inline constexpr std::uint64_t kId = 1;
inline constexpr std::uint64_t kIndexValuePair = kIndex + kReal;
constexpr std::uint64_t set(std::uint64_t cardinality) { return cardinality + 1; }
} // namespace words

inline std::string server_entity(std::size_t j) { return "server:" + std::to_string(j); }
inline std::string node_entity(std::size_t u) { return "node:" + std::to_string(u); }
inline const std::string kCoordinator = "coordinator";

/// Words sent per (entity, round).
class CommStats {
public:
    using Key = std::pair<std::string, int>;

    void charge(const std::string& entity, int round, std::uint64_t count) {
        if (count == 0) return;
        words_[{entity, round}] += count;
        note_round(round);
    }

    void note_round(int round) { rounds_used_ = std::max(rounds_used_, round); }

    std::uint64_t words(const std::string& entity, int round) const {
        auto it = words_.find({entity, round});
        return it == words_.end() ? 0 : it->second;
    }

    std::uint64_t total() const {
        std::uint64_t sum = 0;
        for (const auto& [key, count] : words_) sum += count;
        return sum;
    }

    std::uint64_t round_total(int round) const {
        std::uint64_t sum = 0;
        for (const auto& [key, count] : words_)
            if (key.second == round) sum += count;
        return sum;
    }

    std::uint64_t entity_total(const std::string& entity) const {
        std::uint64_t sum = 0;
        for (const auto& [key, count] : words_)
            if (key.first == entity) sum += count;
        return sum;
    }

    std::uint64_t total_bits() const { return total() * static_cast<std::uint64_t>(bits_per_word()); }
    static constexpr int bits_per_word() { return kBitsPerWord; }
    int rounds_used() const noexcept { return rounds_used_; }
    const std::map<Key, std::uint64_t>& entries() const noexcept { return words_; }

    /// Adds another run's counters that happened in the same rounds
    /// (used for independent copies whose messages are concatenated).
    void absorb(const CommStats& other) {
        for (const auto& [key, count] : other.words_) words_[key] += count;
        rounds_used_ = std::max(rounds_used_, other.rounds_used_);
    }

    void write_csv(std::ostream& os) const {
        os << "entity,round,words\n";
        for (const auto& [key, count] : words_) os << key.first << ',' << key.second << ',' << count << '\n';
    }

    static CommStats read_csv(std::istream& is) {
        CommStats stats;
        std::string line;
        std::getline(is, line);
        if (line != "entity,round,words") throw std::runtime_error("comm csv: unexpected header '" + line + "'");
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto c1 = line.find(',');
            auto c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw std::runtime_error("comm csv: malformed row '" + line + "'");
            stats.charge(line.substr(0, c1), std::stoi(line.substr(c1 + 1, c2 - c1 - 1)),
                         std::stoull(line.substr(c2 + 1)));
        }
        return stats;
    }

    bool operator==(const CommStats&) const = default;

private:
    std::map<Key, std::uint64_t> words_;
    int rounds_used_ = 0;
};

inline CommStats charge(CommStats stats, const std::string& entity, int round, std::uint64_t count) {
    stats.charge(entity, round, count);
    return stats;
}

/// A server's share x(j) of the implicit vector x = sum_j x(j).
struct ServerVector {
    std::size_t owner = 0;
    std::vector<double> entries;
};

/// Checks nonnegativity and equal lengths across servers; returns n.
inline std::size_t validate_servers(std::span<const ServerVector> servers) {
    if (servers.empty()) throw InvalidInstance("at least one server is required");
    std::size_t n = servers.front().entries.size();
    if (n == 0) throw InvalidInstance("server vectors must be nonempty");
    for (const auto& sv : servers) {
        if (sv.entries.size() != n) throw InvalidInstance("server vectors differ in length");
        for (double v : sv.entries)
            if (!(v >= 0.0)) throw InvalidInstance("server vectors must be nonnegative and finite");
    }
    return n;
}

/// Everything a server may read while computing its message for a round.
template <class Input>
struct ServerContext {
    std::size_t id;
    const Input& data;
    std::uint64_t seed;
};

/// Executes a coordinator-model protocol, charging every message.
///
/// The protocol supplies `server_logic()`, a value holding only public
/// parameters whose call operator maps (round, ServerContext, message from the
/// coordinator or null) to the server's upward message; and `coordinate(round,
/// upward messages)`, which returns either the per-server downward messages
/// for the next round or the final output. Downward messages are charged to the
/// coordinator in the round in which the servers consume them.
template <class Protocol, class Input>
std::pair<typename Protocol::Output, CommStats> run_coordinator_protocol(std::span<const Input> servers,
                                                                          Protocol& protocol, std::uint64_t seed) {
    using Up = typename Protocol::Up;
    using Down = typename Protocol::Down;
    using Output = typename Protocol::Output;
    using Logic = decltype(protocol.server_logic());
    static_assert(std::is_invocable_r_v<Up, const Logic&, int, const ServerContext<Input>&, const Down*>,
                  "server logic must be a function of (round, own context, coordinator message)");

    const Logic logic = protocol.server_logic();
    CommStats stats;
    std::vector<Down> downs;
    for (int round = 1;; ++round) {
        if (round > protocol.round_budget())
            throw BudgetViolation("protocol exceeded its budget of " + std::to_string(protocol.round_budget()) +
                                  " rounds");
        std::vector<Up> ups;
        ups.reserve(servers.size());
        for (std::size_t j = 0; j < servers.size(); ++j) {
            const Down* down = downs.empty() ? nullptr : &downs[j];
            if (down) stats.charge(kCoordinator, round, down->words());
            ups.push_back(logic(round, ServerContext<Input>{j, servers[j], seed}, down));
            stats.charge(server_entity(j), round, ups.back().words());
        }
        stats.note_round(round);
        auto step = protocol.coordinate(round, std::move(ups));
        if (auto* out = std::get_if<Output>(&step)) return {std::move(*out), std::move(stats)};
        downs = std::get<std::vector<Down>>(std::move(step));
        if (downs.size() != servers.size())
            throw std::logic_error("coordinator must address exactly one message to each server");
    }
}

} // namespace coordsketch
