#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "coordsketch/errors.hpp"

namespace coordsketch {

/// Keyed rows of a fixed width. A key always denotes the same row: merging
/// datasets that store different rows under one key is an error.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::size_t d) : d_(d) {}

    static Dataset from_matrix(const Eigen::MatrixXd& m, const std::string& key_prefix = "r") {
        Dataset ds(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(m.cols()));
            for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(i, c);
            ds.insert(key_prefix + std::to_string(i), std::move(row));
        }
        return ds;
    }

    void insert(const std::string& key, std::vector<double> row) {
        if (key.empty()) throw std::invalid_argument("dataset keys must be nonempty");
        if (rows_.empty() && d_ == 0) d_ = row.size();
        if (row.size() != d_)
            throw InvalidInstance("row '" + key + "' has " + std::to_string(row.size()) + " columns, expected " +
                                  std::to_string(d_));
        auto [it, fresh] = rows_.try_emplace(key, std::move(row));
        if (!fresh && it->second != row)
            throw ConformingViolation("key '" + key + "' maps to different rows");
    }

    /// Conforming union in place.
    void merge(const Dataset& other) {
        if (other.empty()) return;
        if (!empty() && other.d_ != d_) throw InvalidInstance("datasets differ in column count");
        for (const auto& [key, row] : other.rows_) {
            auto it = rows_.find(key);
            if (it == rows_.end()) {
                if (rows_.empty()) d_ = other.d_;
                rows_.emplace(key, row);
            } else if (it->second != row) {
                throw ConformingViolation("key '" + key + "' maps to different rows");
            }
        }
    }

    static Dataset conforming_union(std::span<const Dataset> parts) {
        Dataset out;
        for (const auto& part : parts) out.merge(part);
        return out;
    }

    std::size_t d() const noexcept { return d_; }
    std::size_t size() const noexcept { return rows_.size(); }
    bool empty() const noexcept { return rows_.empty(); }
    bool contains(const std::string& key) const { return rows_.count(key) > 0; }
    const std::vector<double>& row(const std::string& key) const { return rows_.at(key); }
    const std::map<std::string, std::vector<double>>& rows() const noexcept { return rows_; }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        out.reserve(rows_.size());
        for (const auto& kv : rows_) out.push_back(kv.first);
        return out;
    }

    /// Rows in key order.
    Eigen::MatrixXd matrix() const {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_.size()), static_cast<Eigen::Index>(d_));
        Eigen::Index i = 0;
        for (const auto& kv : rows_) {
            for (std::size_t c = 0; c < d_; ++c) m(i, static_cast<Eigen::Index>(c)) = kv.second[c];
            ++i;
        }
        return m;
    }

    void write_csv(std::ostream& os) const {
        os << "key";
        for (std::size_t c = 1; c <= d_; ++c) os << ",v" << c;
        os << '\n';
        char buf[32];
        for (const auto& [key, row] : rows_) {
            os << key;
            for (double v : row) {
                auto res = std::to_chars(buf, buf + sizeof buf, v);
                os << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
            }
            os << '\n';
        }
    }

    static Dataset read_csv(std::istream& is) {
        std::string line;
        if (!std::getline(is, line)) throw std::runtime_error("dataset csv: missing header");
        auto header = split(line);
        if (header.empty() || header[0] != "key") throw std::runtime_error("dataset csv: header must start with 'key'");
        for (std::size_t c = 1; c < header.size(); ++c)
            if (header[c] != "v" + std::to_string(c))
                throw std::runtime_error("dataset csv: column " + std::to_string(c) + " must be named v" +
                                         std::to_string(c));
        Dataset ds(header.size() - 1);
        std::size_t line_no = 1;
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto fields = split(line);
            if (fields.size() != header.size())
                throw std::runtime_error("dataset csv: line " + std::to_string(line_no) + " has " +
                                         std::to_string(fields.size()) + " fields");
            std::vector<double> row(fields.size() - 1);
            for (std::size_t c = 1; c < fields.size(); ++c) {
                const auto& f = fields[c];
                auto res = std::from_chars(f.data(), f.data() + f.size(), row[c - 1]);
                if (res.ec != std::errc() || res.ptr != f.data() + f.size())
                    throw std::runtime_error("dataset csv: bad number '" + f + "' on line " + std::to_string(line_no));
            }
            ds.insert(fields[0], std::move(row));
        }
        return ds;
    }

    bool operator==(const Dataset&) const = default;

private:
    static std::vector<std::string> split(const std::string& line) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream ss(line);
        while (std::getline(ss, cur, ',')) out.push_back(cur);
        if (!line.empty() && line.back() == ',') out.emplace_back();
        return out;
    }

    std::size_t d_ = 0;
    std::map<std::string, std::vector<double>> rows_;
};

} // namespace coordsketch
