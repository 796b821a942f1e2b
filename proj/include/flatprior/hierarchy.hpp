#pragma once

// Hierarchical priors as chains of conditional quantile maps, and the
// standardizing transform that flattens such a chain into independent
// standard-normal coordinates. The central identity: expressing the model in
// the standardized coordinates cancels the prior term of the information
// against the transform's Jacobian, leaving a white Gaussian prior.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flatprior/errors.hpp"
#include "flatprior/linear_operator.hpp"
#include "flatprior/stdnormal.hpp"

namespace flatprior {

// One scalar parameter conditioned on earlier ones. quantile/cdf/log_density
// receive the already-materialized parent values.
struct ConditionalLayer {
    std::vector<std::size_t> parents;
    std::function<double(UnitInterval, std::span<const double>)> quantile;
    std::function<double(double, std::span<const double>)> cdf;
    std::function<double(double, std::span<const double>)> log_density;
    std::string label;
};

class HierarchicalModel {
public:
    explicit HierarchicalModel(std::vector<ConditionalLayer> layers)
        : layers_(std::move(layers)) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& layer = layers_[i];
            if (!layer.quantile || !layer.cdf || !layer.log_density)
                throw std::invalid_argument("HierarchicalModel: layer " + std::to_string(i) +
                                            " missing a callable");
            for (std::size_t p : layer.parents)
                if (p >= i)
                    throw std::invalid_argument("HierarchicalModel: layer " + std::to_string(i) +
                                                " depends on a later layer");
        }
    }

    std::size_t dimension() const { return layers_.size(); }
    const ConditionalLayer& layer(std::size_t i) const { return layers_.at(i); }

    std::vector<double> gather_parents(std::size_t i, std::span<const double> theta) const {
        const auto& idx = layers_[i].parents;
        std::vector<double> vals(idx.size());
        for (std::size_t j = 0; j < idx.size(); ++j) vals[j] = theta[idx[j]];
        return vals;
    }

private:
    std::vector<ConditionalLayer> layers_;
};

using LikelihoodFn = std::function<double(std::span<const double>)>;

// theta_i = Q_i(Phi(xi_i) | parents), evaluated in layer order.
inline std::vector<double> forward_transform(const HierarchicalModel& model,
                                             std::span<const double> xi) {
    if (xi.size() != model.dimension())
        throw std::invalid_argument("forward_transform: wrong coordinate count");
    std::vector<double> theta(xi.size());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        const auto parents = model.gather_parents(i, theta);
        try {
            theta[i] = model.layer(i).quantile(std_normal_cdf(xi[i]), parents);
        } catch (const std::exception& e) {
            throw TransformError(i, e.what());
        }
        if (!std::isfinite(theta[i]))
            throw TransformError(i, "quantile produced a non-finite value");
    }
    return theta;
}

// xi_i = Phi^{-1}(F_i(theta_i | parents)). Parents are plain parameter values,
// so no layer ordering subtleties arise on the way back.
inline std::vector<double> inverse_transform(const HierarchicalModel& model,
                                             std::span<const double> theta) {
    if (theta.size() != model.dimension())
        throw std::invalid_argument("inverse_transform: wrong parameter count");
    std::vector<double> xi(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto parents = model.gather_parents(i, theta);
        try {
            const double u = model.layer(i).cdf(theta[i], parents);
            xi[i] = std_normal_quantile(UnitInterval(u));
        } catch (const std::exception& e) {
            throw TransformError(i, e.what());
        }
    }
    return xi;
}

// Negative log posterior (up to the evidence) in the native parameters:
// likelihood information plus every conditional prior's -log density.
inline double deep_information(const HierarchicalModel& model,
                               std::span<const double> theta,
                               const LikelihoodFn& likelihood) {
    if (theta.size() != model.dimension())
        throw std::invalid_argument("deep_information: wrong parameter count");
    double info = likelihood(theta);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto parents = model.gather_parents(i, theta);
        try {
            info -= model.layer(i).log_density(theta[i], parents);
        } catch (const std::exception& e) {
            throw TransformError(i, e.what());
        }
    }
    return info;
}

// The same posterior in standardized coordinates. The conditional priors have
// cancelled against the transform Jacobian, leaving the white quadratic.
inline double flat_information(const HierarchicalModel& model,
                               std::span<const double> xi,
                               const LikelihoodFn& likelihood) {
    const auto theta = forward_transform(model, xi);
    double quad = 0.0;
    for (double x : xi) quad += x * x;
    return likelihood(theta) + 0.5 * quad;
}

// log |d theta / d xi| along the forward transform. Triangular structure makes
// it a sum of scalar terms: log phi(xi_i) - log p_i(theta_i | parents).
inline double log_jacobian(const HierarchicalModel& model, std::span<const double> xi) {
    if (xi.size() != model.dimension())
        throw std::invalid_argument("log_jacobian: wrong coordinate count");
    std::vector<double> theta(xi.size());
    double log_det = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i) {
        const auto parents = model.gather_parents(i, theta);
        try {
            theta[i] = model.layer(i).quantile(std_normal_cdf(xi[i]), parents);
            log_det += std_normal_log_pdf(xi[i]) - model.layer(i).log_density(theta[i], parents);
        } catch (const std::exception& e) {
            throw TransformError(i, e.what());
        }
    }
    return log_det;
}

// Correlated Gaussian from white coordinates through an eigenbasis:
// theta = E diag(sqrt(lambda)) xi, so cov(theta) = E diag(lambda) E^T.
inline std::vector<double> standardize_multivariate_gaussian(
    const LinearOperator& eigenbasis,
    std::span<const double> eigenvalues,
    std::span<const double> xi) {
    if (eigenvalues.size() != eigenbasis.domain_dim() || xi.size() != eigenvalues.size())
        throw std::invalid_argument("standardize_multivariate_gaussian: size mismatch");
    std::vector<double> scaled(xi.size());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        if (!(eigenvalues[i] > 0.0))
            throw std::domain_error("standardize_multivariate_gaussian: non-positive eigenvalue");
        scaled[i] = std::sqrt(eigenvalues[i]) * xi[i];
    }
    return eigenbasis.apply(scaled);
}

// Two-layer demo hierarchy: a scale sigma ~ Exp(lambda) and a location
// alpha ~ N(mu, sigma^2) conditioned on it. Both transforms have closed forms.
inline HierarchicalModel make_exponential_gaussian_model(double mu, double lambda) {
    const ExpHyper rate(lambda);
    ConditionalLayer scale{
        {},
        [rate](UnitInterval u, std::span<const double>) { return exp_quantile(u, rate); },
        [rate](double theta, std::span<const double>) { return exp_cdf(theta, rate); },
        [rate](double theta, std::span<const double>) { return exp_log_pdf(theta, rate); },
        "scale"};
    ConditionalLayer location{
        {0},
        [mu](UnitInterval u, std::span<const double> par) {
            return gaussian_quantile(u, GaussHyper(mu, par[0]));
        },
        [mu](double theta, std::span<const double> par) {
            return gaussian_cdf(theta, GaussHyper(mu, par[0]));
        },
        [mu](double theta, std::span<const double> par) {
            return gaussian_log_pdf(theta, GaussHyper(mu, par[0]));
        },
        "location"};
    return HierarchicalModel({std::move(scale), std::move(location)});
}

// Closed-form forward map of the demo model, bypassing the generic layer
// plumbing. Used to pin the generic path against the direct expressions.
inline std::pair<double, double> exponential_gaussian_closed_form(double xi_scale,
                                                                  double xi_location,
                                                                  double mu, double lambda) {
    const double sigma = standardize_exponential(xi_scale, ExpHyper(lambda));
    const double alpha = standardize_gaussian(xi_location, GaussHyper(mu, sigma));
    return {sigma, alpha};
}

}  // namespace flatprior
