#pragma once

// Scalar standard-normal machinery: CDF, inverse CDF, and the closed-form
// maps that turn a standard-normal coordinate into an exponential or Gaussian
// parameter. These are the primitives every hierarchical standardization is
// built out of, so they are held to tight accuracy contracts (see tests).

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace flatprior {

inline constexpr double kSqrt2 = 1.41421356237309504880;
inline constexpr double kHalfLn2Pi = 0.91893853320467274178;

// Number of CDF evaluations that landed on an exact 0/1 boundary and were
// nudged to the nearest interior representable value. Exposed so long runs
// can report how often the tails saturated.
inline std::atomic<std::uint64_t>& boundary_nudge_count() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

// A probability strictly inside (0,1). Constructing one from a boundary or
// non-finite value throws, which is how quantile domain errors surface.
// Alongside u it carries 1-u: producers that know the upper tail to full
// relative precision (CDFs evaluated via erfc/expm1) pass it explicitly, so
// inverses stay accurate where u itself has rounded into the ulps below 1.
class UnitInterval {
public:
    explicit UnitInterval(double value) : UnitInterval(value, 1.0 - value) {}

    UnitInterval(double value, double complement) : value_(value), complement_(complement) {
        if (!(value > 0.0) || !(value < 1.0))
            throw std::domain_error("UnitInterval: value must lie strictly in (0,1)");
        if (complement_ >= 1.0) complement_ = std::nextafter(1.0, 0.0);
        if (!(complement_ > 0.0))
            throw std::domain_error("UnitInterval: complement must lie strictly in (0,1)");
    }

    double value() const { return value_; }
    double complement() const { return complement_; }

private:
    double value_;
    double complement_;
};

struct GaussHyper {
    GaussHyper(double mu, double sigma) : mu(mu), sigma(sigma) {
        if (!std::isfinite(mu) || !(sigma > 0.0) || !std::isfinite(sigma))
            throw std::domain_error("GaussHyper: need finite mu and sigma > 0");
    }
    double mu;
    double sigma;
};

struct ExpHyper {
    explicit ExpHyper(double lambda) : lambda(lambda) {
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw std::domain_error("ExpHyper: need rate lambda > 0");
    }
    double lambda;
};

inline double erf(double x) {
    if (!std::isfinite(x)) throw std::domain_error("erf: non-finite argument");
    return std::erf(x);
}

inline double erfc(double x) {
    if (!std::isfinite(x)) throw std::domain_error("erfc: non-finite argument");
    return std::erfc(x);
}

inline double std_normal_log_pdf(double xi) {
    return -0.5 * xi * xi - kHalfLn2Pi;
}

// CDF of the standard normal. Both tails are evaluated with erfc so each
// side keeps full relative accuracy; exact zeros/ones of the primary value
// are nudged to the nearest interior value and counted rather than silently
// handed to a quantile.
inline UnitInterval std_normal_cdf(double xi) {
    if (!std::isfinite(xi)) throw std::domain_error("std_normal_cdf: non-finite argument");
    double u = 0.5 * std::erfc(-xi / kSqrt2);
    double c = 0.5 * std::erfc(xi / kSqrt2);
    if (u <= 0.0) {
        u = std::numeric_limits<double>::denorm_min();
        boundary_nudge_count().fetch_add(1, std::memory_order_relaxed);
    } else if (u >= 1.0) {
        u = std::nextafter(1.0, 0.0);
        boundary_nudge_count().fetch_add(1, std::memory_order_relaxed);
    }
    if (c <= 0.0) c = std::numeric_limits<double>::denorm_min();
    return UnitInterval(u, c);
}

namespace detail {

// Lower-half inverse CDF, p in (0, 1/2]: rational initial guess (Acklam's
// coefficients) polished with Halley steps against the erfc-based CDF. On
// this side both p and erfc keep full relative precision, so the polish
// reaches the ulp level everywhere the density is representable; in the
// extreme subnormal tail the initial guess (relative error ~1e-9) stands.
inline double std_normal_lower_quantile(double p) {
    static constexpr double a[6] = {
        -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
        1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[5] = {
        -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
        6.680131188771972e+01, -1.328068155288572e+01};
    static constexpr double c[6] = {
        -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
        -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
    static constexpr double d[4] = {
        7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
        3.754408661907416e+00};
    static constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }

    for (int pass = 0; pass < 2 && 0.5 * x * x < 700.0; ++pass) {
        const double e = 0.5 * std::erfc(-x / kSqrt2) - p;
        const double step = e * std::exp(0.5 * x * x) * 2.50662827463100050242;
        x -= step / (1.0 + 0.5 * x * step);
    }
    return x;
}

}  // namespace detail

// Inverse standard-normal CDF. The upper half runs through the complement so
// accuracy is symmetric: quantiles of CDF outputs invert the precise tail,
// not the value rounded against 1.
inline double std_normal_quantile(UnitInterval u) {
    if (u.value() <= 0.5) return detail::std_normal_lower_quantile(u.value());
    return -detail::std_normal_lower_quantile(u.complement());
}

// Quantile of Exp(lambda). Upper half uses the carried complement, which
// stays accurate where 1 - u has rounded away the tail.
inline double exp_quantile(UnitInterval u, ExpHyper h) {
    if (u.value() < 0.5) return -std::log1p(-u.value()) / h.lambda;
    return -std::log(u.complement()) / h.lambda;
}

inline double exp_cdf(double theta, ExpHyper h) {
    return -std::expm1(-h.lambda * theta);
}

inline double exp_log_pdf(double theta, ExpHyper h) {
    if (!(theta > 0.0)) throw std::domain_error("exp_log_pdf: theta outside support");
    return std::log(h.lambda) - h.lambda * theta;
}

inline double gaussian_quantile(UnitInterval u, GaussHyper h) {
    return h.mu + h.sigma * std_normal_quantile(u);
}

inline double gaussian_cdf(double theta, GaussHyper h) {
    return std_normal_cdf((theta - h.mu) / h.sigma).value();
}

inline double gaussian_log_pdf(double theta, GaussHyper h) {
    const double z = (theta - h.mu) / h.sigma;
    return -0.5 * z * z - kHalfLn2Pi - std::log(h.sigma);
}

// Gaussian parameter from a standard-normal coordinate: the composition
// gaussian_quantile(std_normal_cdf(xi)) collapses to an affine map.
inline double standardize_gaussian(double xi, GaussHyper h) {
    if (!std::isfinite(xi)) throw std::domain_error("standardize_gaussian: non-finite argument");
    return h.mu + h.sigma * xi;
}

// Exponential parameter from a standard-normal coordinate. The upper-tail
// complement erfc(xi/sqrt2) keeps accuracy for large positive xi, where the
// naive 1-CDF form would cancel.
inline double standardize_exponential(double xi, ExpHyper h) {
    if (!std::isfinite(xi)) throw std::domain_error("standardize_exponential: non-finite argument");
    double t = 0.5 * std::erfc(xi / kSqrt2);
    if (t <= 0.0)
        throw std::overflow_error("standardize_exponential: upper tail saturated");
    if (t >= 1.0) {
        t = std::nextafter(1.0, 0.0);
        boundary_nudge_count().fetch_add(1, std::memory_order_relaxed);
    }
    return -std::log(t) / h.lambda;
}

}  // namespace flatprior
