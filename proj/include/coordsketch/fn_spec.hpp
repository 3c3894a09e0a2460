#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace coordsketch {

/// A nonnegative, nondecreasing, super-additive f with f(0) = 0, together
/// with the growth constants the summation protocol needs:
///   f(theta' y) >= theta f(y),   f(y / (4 sqrt(theta) theta')) >= f(y) / theta''
/// and an upper bound cf(s) on c_f[s], the least constant with
///   f(y_1 + ... + y_s) <= (c_f[s] / s) (sqrt f(y_1) + ... + sqrt f(y_s))^2.
struct FnSpec {
    std::string name;
    std::function<double(double)> f;
    std::function<double(double)> f_inv;
    std::function<double(double)> cf;
    double theta = 2.0;
    double theta_prime = 2.0;
    double theta_dblprime = 2.0;

    double operator()(double x) const { return f(x); }
    double eps1() const { return 1.0 / theta_dblprime; }
    double eps2() const { return 1.0 - 1.0 / theta_dblprime; }
};

inline double cf_bound(const FnSpec& fn, double s) {
    if (s < 1.0) throw std::invalid_argument("cf_bound: server count must be at least 1");
    return fn.cf(s);
}

/// f(x) = x^k with theta = 2, theta' = 2^{1/k}. theta'' is the least value
/// meeting the second growth condition with equality: (4 sqrt(2) 2^{1/k})^k.
inline FnSpec power_fn(double k) {
    if (!(k >= 1.0)) throw std::invalid_argument("power function needs k >= 1");
    FnSpec fn;
    fn.name = "pow:" + [&] {
        std::string s = std::to_string(k);
        s.erase(s.find_last_not_of('0') + 1);
        if (s.back() == '.') s.pop_back();
        return s;
    }();
    fn.f = [k](double x) { return std::pow(x, k); };
    fn.f_inv = [k](double y) { return std::pow(y, 1.0 / k); };
    fn.cf = [k](double s) { return std::pow(s, k - 1.0); };
    fn.theta = 2.0;
    fn.theta_prime = std::pow(2.0, 1.0 / k);
    fn.theta_dblprime = std::pow(4.0 * std::sqrt(fn.theta) * fn.theta_prime, k);
    return fn;
}

/// Huber loss: x^2/(2 tau) below tau, x - tau/2 above. Convexity with f(0) = 0
/// gives f(2y) >= 2 f(y), so theta = theta' = 2, and f(y/c) >= f(y)/c^2 for
/// c = 4 sqrt(2) * 2, so theta'' = 128. c_f[s] <= s since sqrt(f) is concave.
inline FnSpec huber_fn(double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("huber threshold must be positive");
    FnSpec fn;
    fn.name = "huber:" + std::to_string(tau);
    fn.f = [tau](double x) { return x <= tau ? x * x / (2.0 * tau) : x - tau / 2.0; };
    fn.f_inv = [tau](double y) { return y <= tau / 2.0 ? std::sqrt(2.0 * tau * y) : y + tau / 2.0; };
    fn.cf = [](double s) { return s; };
    fn.theta = 2.0;
    fn.theta_prime = 2.0;
    double c = 4.0 * std::sqrt(fn.theta) * fn.theta_prime;
    fn.theta_dblprime = c * c;
    return fn;
}

/// Parses "pow:K" or "huber:TAU".
inline FnSpec parse_fn(const std::string& text) {
    auto colon = text.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("function spec must look like pow:K or huber:TAU");
    std::string kind = text.substr(0, colon);
    double arg = std::stod(text.substr(colon + 1));
    if (kind == "pow") return power_fn(arg);
    if (kind == "huber") return huber_fn(arg);
    throw std::invalid_argument("unknown function kind '" + kind + "'");
}

} // namespace coordsketch
