#pragma once

// Matrix-free linear map with an explicit adjoint. Everything that acts on
// fields (FFTs, responses, covariances, curvatures) is expressed through this
// interface so adjoint consistency can be tested uniformly.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace flatprior {

class LinearOperator {
public:
    using ApplyFn = std::function<void(std::span<const double>, std::span<double>)>;

    LinearOperator(std::size_t domain_dim, std::size_t codomain_dim,
                   ApplyFn forward, ApplyFn adjoint)
        : domain_(domain_dim), codomain_(codomain_dim),
          forward_(std::move(forward)), adjoint_(std::move(adjoint)) {}

    std::size_t domain_dim() const { return domain_; }
    std::size_t codomain_dim() const { return codomain_; }

    std::vector<double> apply(std::span<const double> x) const {
        if (x.size() != domain_)
            throw std::invalid_argument("LinearOperator::apply: wrong input size");
        std::vector<double> y(codomain_, 0.0);
        forward_(x, y);
        return y;
    }

    std::vector<double> adjoint_apply(std::span<const double> y) const {
        if (y.size() != codomain_)
            throw std::invalid_argument("LinearOperator::adjoint_apply: wrong input size");
        std::vector<double> x(domain_, 0.0);
        adjoint_(y, x);
        return x;
    }

    static LinearOperator identity(std::size_t n) {
        auto copy = [](std::span<const double> in, std::span<double> out) {
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i];
        };
        return LinearOperator(n, n, copy, copy);
    }

private:
    std::size_t domain_;
    std::size_t codomain_;
    ApplyFn forward_;
    ApplyFn adjoint_;
};

// a after b: (a*b) x = a(b(x)).
inline LinearOperator compose(LinearOperator a, LinearOperator b) {
    if (b.codomain_dim() != a.domain_dim())
        throw std::invalid_argument("compose: dimension mismatch");
    auto fwd = [a, b](std::span<const double> x, std::span<double> y) {
        auto mid = b.apply(x);
        auto res = a.apply(mid);
        for (std::size_t i = 0; i < res.size(); ++i) y[i] = res[i];
    };
    auto adj = [a, b](std::span<const double> y, std::span<double> x) {
        auto mid = a.adjoint_apply(y);
        auto res = b.adjoint_apply(mid);
        for (std::size_t i = 0; i < res.size(); ++i) x[i] = res[i];
    };
    return LinearOperator(b.domain_dim(), a.codomain_dim(), std::move(fwd), std::move(adj));
}

}  // namespace flatprior
