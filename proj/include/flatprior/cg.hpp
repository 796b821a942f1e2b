#pragma once

// Preconditioned conjugate gradients for SPD systems given as callables.
// Convergence is measured on the true residual in the 2-norm relative to b.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "flatprior/errors.hpp"

namespace flatprior {

struct CgOptions {
    double tol = 1e-7;
    int max_iter = 2000;
};

struct CgResult {
    std::vector<double> x;
    double rel_residual = 0.0;
    int iterations = 0;
    bool converged = true;
};

using MatVec = std::function<std::vector<double>(std::span<const double>)>;

inline CgResult conjugate_gradient(const MatVec& apply, std::span<const double> b,
                                   const CgOptions& opts, const MatVec& precond = {},
                                   std::span<const double> x0 = {}) {
    const std::size_t n = b.size();
    CgResult res;
    res.x.assign(n, 0.0);

    double bnorm = 0.0;
    for (double v : b) bnorm += v * v;
    bnorm = std::sqrt(bnorm);
    if (bnorm == 0.0) return res;  // x = 0 solves exactly

    std::vector<double> r(b.begin(), b.end());
    if (!x0.empty()) {
        if (x0.size() != n) throw std::invalid_argument("conjugate_gradient: bad warm start");
        res.x.assign(x0.begin(), x0.end());
        auto ax = apply(res.x);
        for (std::size_t i = 0; i < n; ++i) r[i] -= ax[i];
    }

    auto resid_norm = [&] {
        double s = 0.0;
        for (double v : r) s += v * v;
        return std::sqrt(s);
    };

    double rnorm = resid_norm();
    if (rnorm / bnorm <= opts.tol) {
        res.rel_residual = rnorm / bnorm;
        return res;
    }

    std::vector<double> z = precond ? precond(r) : r;
    std::vector<double> p = z;
    double rz = 0.0;
    for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];

    for (int it = 1; it <= opts.max_iter; ++it) {
        auto q = apply(p);
        double pq = 0.0;
        for (std::size_t i = 0; i < n; ++i) pq += p[i] * q[i];
        if (!(pq > 0.0))
            throw CgFailure("conjugate_gradient: operator not positive definite", res.x,
                            rnorm / bnorm, it);
        const double step = rz / pq;
        for (std::size_t i = 0; i < n; ++i) {
            res.x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        rnorm = resid_norm();
        res.iterations = it;
        if (rnorm / bnorm <= opts.tol) {
            res.rel_residual = rnorm / bnorm;
            return res;
        }
        z = precond ? precond(r) : r;
        double rz_next = 0.0;
        for (std::size_t i = 0; i < n; ++i) rz_next += r[i] * z[i];
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    throw CgFailure("conjugate_gradient: no convergence within budget", res.x, rnorm / bnorm,
                    opts.max_iter);
}

}  // namespace flatprior
