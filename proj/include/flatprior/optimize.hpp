#pragma once

// Bounded-memory BFGS with an Armijo line search. The search interpolates a
// quadratic through (value, slope, trial value) and, once a step is accepted,
// polishes it with the quadratic's minimizer; on exactly quadratic objectives
// the accepted step is the exact line minimum, which makes the method
// terminate in at most dim iterations there. Trial evaluations that throw a
// domain violation count as +infinity, so searches back away from invalid
// regions instead of crashing.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "flatprior/errors.hpp"

namespace flatprior {

struct OptFunction {
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct LbfgsOptions {
    int max_iterations = 20;
    int memory = 20;
    double grad_tol = 1e-8;
    int max_line_trials = 30;
    double armijo_c1 = 1e-4;
};

struct LbfgsResult {
    std::vector<double> x;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    bool line_search_failed = false;
};

namespace detail {

inline double guarded_value(const OptFunction& f, std::span<const double> x) {
    try {
        return f.value(x);
    } catch (const std::domain_error&) {
        return std::numeric_limits<double>::infinity();
    } catch (const TransformError&) {
        return std::numeric_limits<double>::infinity();
    }
}

inline double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace detail

inline LbfgsResult minimize_lbfgs(const OptFunction& f, std::vector<double> x0,
                                  const LbfgsOptions& opts = {}) {
    const std::size_t n = x0.size();
    LbfgsResult res;
    res.x = std::move(x0);
    res.value = f.value(res.x);
    std::vector<double> grad = f.gradient(res.x);
    res.grad_norm = detail::inf_norm(grad);
    if (res.grad_norm <= opts.grad_tol) {
        res.converged = true;
        return res;
    }

    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;
    std::vector<double> direction(n), x_trial(n);

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        // Two-loop recursion for d = -H g.
        direction.assign(grad.begin(), grad.end());
        std::vector<double> alpha(s_hist.size());
        for (std::size_t j = s_hist.size(); j-- > 0;) {
            double sd = 0.0;
            for (std::size_t i = 0; i < n; ++i) sd += s_hist[j][i] * direction[i];
            alpha[j] = rho_hist[j] * sd;
            for (std::size_t i = 0; i < n; ++i) direction[i] -= alpha[j] * y_hist[j][i];
        }
        if (!s_hist.empty()) {
            double sy = 0.0, yy = 0.0;
            const auto& s = s_hist.back();
            const auto& y = y_hist.back();
            for (std::size_t i = 0; i < n; ++i) {
                sy += s[i] * y[i];
                yy += y[i] * y[i];
            }
            const double gamma = sy / yy;
            for (double& d : direction) d *= gamma;
        }
        for (std::size_t j = 0; j < s_hist.size(); ++j) {
            double yd = 0.0;
            for (std::size_t i = 0; i < n; ++i) yd += y_hist[j][i] * direction[i];
            const double b = rho_hist[j] * yd;
            for (std::size_t i = 0; i < n; ++i) direction[i] += (alpha[j] - b) * s_hist[j][i];
        }
        for (double& d : direction) d = -d;

        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) slope += grad[i] * direction[i];
        if (!(slope < 0.0)) {  // not a descent direction; fall back to steepest
            for (std::size_t i = 0; i < n; ++i) direction[i] = -grad[i];
            slope = 0.0;
            for (std::size_t i = 0; i < n; ++i) slope += grad[i] * direction[i];
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Armijo backtracking with quadratic interpolation.
        double step = 1.0;
        if (s_hist.empty()) {
            const double dn = detail::inf_norm(direction);
            if (dn > 1.0) step = 1.0 / dn;  // conservative first step
        }
        double f_trial = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int trial = 0; trial < opts.max_line_trials; ++trial) {
            for (std::size_t i = 0; i < n; ++i) x_trial[i] = res.x[i] + step * direction[i];
            f_trial = detail::guarded_value(f, x_trial);
            if (f_trial <= res.value + opts.armijo_c1 * step * slope) {
                accepted = true;
                break;
            }
            double next = 0.5 * step;
            if (std::isfinite(f_trial)) {
                const double denom = 2.0 * (f_trial - res.value - slope * step);
                if (denom > 0.0) {
                    const double interp = -slope * step * step / denom;
                    if (interp > 0.05 * step && interp < 0.95 * step) next = interp;
                }
            }
            step = next;
        }
        if (!accepted) {
            res.line_search_failed = true;
            return res;
        }

        // Quadratic polish: exact minimizer along the ray for quadratic
        // objectives, one extra evaluation otherwise.
        {
            const double denom = 2.0 * (f_trial - res.value - slope * step);
            if (denom > 0.0) {
                const double opt_step = -slope * step * step / denom;
                if (opt_step > 0.0 && std::isfinite(opt_step) && opt_step != step) {
                    for (std::size_t i = 0; i < n; ++i)
                        x_trial[i] = res.x[i] + opt_step * direction[i];
                    const double f_polish = detail::guarded_value(f, x_trial);
                    if (f_polish < f_trial) {
                        f_trial = f_polish;
                        step = opt_step;
                    }
                }
            }
        }

        std::vector<double> x_next(n);
        for (std::size_t i = 0; i < n; ++i) x_next[i] = res.x[i] + step * direction[i];
        std::vector<double> grad_next = f.gradient(x_next);

        std::vector<double> s(n), y(n);
        double sy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_next[i] - res.x[i];
            y[i] = grad_next[i] - grad[i];
            sy += s[i] * y[i];
        }
        if (sy > 1e-14) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        res.x = std::move(x_next);
        res.value = f_trial;
        grad = std::move(grad_next);
        res.iterations = iter + 1;
        res.grad_norm = detail::inf_norm(grad);
        if (res.grad_norm <= opts.grad_tol) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

}  // namespace flatprior
