#pragma once

// Gaussian random field with an unknown binned log-spectrum tau, masked
// pixel-wise Gaussian noise, and two equivalent parametrizations:
//   deep: (s, tau)     field and log-spectrum, correlated prior
//   flat: (xi, zeta)   both mapped to white standard-normal coordinates via
//                      s = A(tau) xi,  tau = L zeta.
// A(tau) = F^dagger diag(e^{tau/2} per pixel) U with U the real relabeling,
// so A A^T equals the stationary covariance exactly.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flatprior/errors.hpp"
#include "flatprior/fft.hpp"
#include "flatprior/fieldops.hpp"
#include "flatprior/grid.hpp"
#include "flatprior/linear_operator.hpp"
#include "flatprior/rng.hpp"

namespace flatprior {

struct NoiseModel {
    explicit NoiseModel(double sigma) : sigma(sigma) {
        if (!(sigma > 0.0)) throw std::invalid_argument("NoiseModel: sigma must be positive");
    }
    double sigma;
};

struct SpectrumPrior {
    double sigma_smooth = 10.0;
    double sigma_offset = 10.0;
};

struct DeepState {
    std::vector<double> s;
    std::vector<double> tau;
};

struct FlatState {
    std::vector<double> xi;
    std::vector<double> zeta;
};

// |tau| beyond this makes e^{tau/2} numerically hazardous; treated as a hard
// domain violation so optimizer line searches back off instead of clamping.
inline constexpr double kTauBound = 40.0;

inline void check_tau_range(std::span<const double> tau) {
    for (std::size_t b = 0; b < tau.size(); ++b)
        if (!(std::abs(tau[b]) <= kTauBound))
            throw std::domain_error("tau out of range at bin " + std::to_string(b));
}

class GpModel {
public:
    GpModel(const Grid2D& grid, std::size_t n_bins, std::vector<std::size_t> mask,
            NoiseModel noise, SpectrumPrior prior, std::vector<double> data)
        : grid_(grid),
          fft_(grid),
          binning_(SpectralBinning::build(grid, n_bins)),
          layout_(grid),
          smoothness_(binning_, prior.sigma_smooth, prior.sigma_offset),
          response_(grid, std::move(mask)),
          noise_(noise),
          prior_(prior),
          data_(std::move(data)) {
        if (data_.size() != response_.n_data())
            throw std::invalid_argument("GpModel: data length does not match mask");
    }

    const Grid2D& grid() const { return grid_; }
    const Fft2D& fft() const { return fft_; }
    const SpectralBinning& binning() const { return binning_; }
    const XiLayout& layout() const { return layout_; }
    const LogkSmoothness& smoothness() const { return smoothness_; }
    const Response& response() const { return response_; }
    const NoiseModel& noise() const { return noise_; }
    const SpectrumPrior& spectrum_prior() const { return prior_; }
    const std::vector<double>& data() const { return data_; }

    std::size_t n_field() const { return grid_.n_pixels(); }
    std::size_t n_bins() const { return binning_.n_bins; }
    std::size_t n_data() const { return response_.n_data(); }
    std::size_t flat_dim() const { return n_field() + n_bins(); }

    std::vector<double> tau_from_zeta(std::span<const double> zeta) const {
        return smoothness_.tau_from_zeta(zeta);
    }
    std::vector<double> zeta_from_tau(std::span<const double> tau) const {
        return smoothness_.zeta_from_tau(tau);
    }

    // Pixel weights e^{c * tau} distributed over the conjugate grid.
    std::vector<double> pixel_weights(std::span<const double> tau, double exponent) const {
        check_tau_range(tau);
        std::vector<double> bins(n_bins());
        for (std::size_t b = 0; b < bins.size(); ++b) bins[b] = std::exp(exponent * tau[b]);
        return power_distribute(binning_, bins);
    }

    // F^dagger diag(w) F, symmetric spectral multiplier in pixel space.
    std::vector<double> spectral_apply(std::span<const double> weights,
                                       std::span<const double> field) const {
        std::vector<std::complex<double>> buf(field.begin(), field.end());
        std::vector<std::complex<double>> hat(buf.size());
        fft_.forward_complex(buf, hat);
        for (std::size_t i = 0; i < hat.size(); ++i) hat[i] *= weights[i];
        fft_.backward_complex(hat, buf);
        std::vector<double> out(field.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real();
        return out;
    }

    // F^dagger diag(w) U : real coefficients to a real field.
    std::vector<double> weighted_synthesis(std::span<const double> weights,
                                           std::span<const double> xi) const {
        std::vector<std::complex<double>> h(xi.size());
        layout_.to_harmonic(xi, h);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] *= weights[i];
        std::vector<std::complex<double>> buf(h.size());
        fft_.backward_complex(h, buf);
        std::vector<double> out(xi.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real();
        return out;
    }

    // U^dagger diag(w) F : transpose of weighted_synthesis with the same w.
    std::vector<double> weighted_analysis(std::span<const double> weights,
                                          std::span<const double> field) const {
        std::vector<std::complex<double>> buf(field.begin(), field.end());
        std::vector<std::complex<double>> hat(buf.size());
        fft_.forward_complex(buf, hat);
        for (std::size_t i = 0; i < hat.size(); ++i) hat[i] *= weights[i];
        std::vector<double> out(field.size());
        layout_.from_harmonic(hat, out);
        return out;
    }

    std::vector<double> amplitude_apply(std::span<const double> tau,
                                        std::span<const double> xi) const {
        return weighted_synthesis(pixel_weights(tau, 0.5), xi);
    }
    std::vector<double> amplitude_adjoint(std::span<const double> tau,
                                          std::span<const double> field) const {
        return weighted_analysis(pixel_weights(tau, 0.5), field);
    }
    std::vector<double> amplitude_inverse(std::span<const double> tau,
                                          std::span<const double> field) const {
        return weighted_analysis(pixel_weights(tau, -0.5), field);
    }
    std::vector<double> amplitude_inv_transpose(std::span<const double> tau,
                                                std::span<const double> xi) const {
        return weighted_synthesis(pixel_weights(tau, -0.5), xi);
    }

    LinearOperator amplitude_operator(std::vector<double> tau) const {
        auto w = pixel_weights(tau, 0.5);
        const std::size_t n = n_field();
        return LinearOperator(
            n, n,
            [this, w](std::span<const double> in, std::span<double> out) {
                auto s = weighted_synthesis(w, in);
                std::copy(s.begin(), s.end(), out.begin());
            },
            [this, w](std::span<const double> in, std::span<double> out) {
                auto x = weighted_analysis(w, in);
                std::copy(x.begin(), x.end(), out.begin());
            });
    }

    LinearOperator covariance_operator(std::span<const double> tau) const {
        auto w = pixel_weights(tau, 1.0);
        const std::size_t n = n_field();
        auto apply = [this, w](std::span<const double> in, std::span<double> out) {
            auto s = spectral_apply(w, in);
            std::copy(s.begin(), s.end(), out.begin());
        };
        return LinearOperator(n, n, apply, apply);
    }

    double likelihood_info(std::span<const double> s) const {
        if (s.size() != n_field())
            throw std::invalid_argument("likelihood_info: wrong field size");
        std::vector<double> r(n_data());
        response_.apply(s, r);
        double acc = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            const double diff = data_[j] - r[j];
            acc += diff * diff;
        }
        return 0.5 * acc / (noise_.sigma * noise_.sigma);
    }

    // Residual d - R s pulled back to pixel space and divided by sigma^2.
    std::vector<double> residual_influence(std::span<const double> s) const {
        std::vector<double> r(n_data());
        response_.apply(s, r);
        for (std::size_t j = 0; j < r.size(); ++j)
            r[j] = (data_[j] - r[j]) / (noise_.sigma * noise_.sigma);
        std::vector<double> g(n_field());
        response_.adjoint_apply(r, g);
        return g;
    }

    double deep_info(const DeepState& state) const {
        check_deep(state);
        check_tau_range(state.tau);
        const double lik = likelihood_info(state.s);
        auto hat = harmonic_power(state.s);
        auto binpow = bin_sums(binning_, hat);
        double prior_s = 0.0, trace = 0.0;
        for (std::size_t b = 0; b < n_bins(); ++b) {
            prior_s += std::exp(-state.tau[b]) * binpow[b];
            trace += static_cast<double>(binning_.multiplicities[b]) * state.tau[b];
        }
        return lik + 0.5 * prior_s + 0.5 * trace + smoothness_.quadratic_form(state.tau);
    }

    DeepState deep_grad(const DeepState& state) const {
        check_deep(state);
        check_tau_range(state.tau);
        DeepState g;
        auto influence = residual_influence(state.s);
        auto sinv = spectral_apply(pixel_weights(state.tau, -1.0), state.s);
        g.s.resize(n_field());
        for (std::size_t i = 0; i < g.s.size(); ++i) g.s[i] = -influence[i] + sinv[i];

        auto binpow = bin_sums(binning_, harmonic_power(state.s));
        auto tprec = smoothness_.precision_apply(state.tau);
        g.tau.resize(n_bins());
        for (std::size_t b = 0; b < n_bins(); ++b)
            g.tau[b] = -0.5 * std::exp(-state.tau[b]) * binpow[b] +
                       0.5 * static_cast<double>(binning_.multiplicities[b]) + tprec[b];
        return g;
    }

    double flat_info(const FlatState& state) const {
        check_flat(state);
        auto tau = tau_from_zeta(state.zeta);
        auto s = amplitude_apply(tau, state.xi);
        double quad = 0.0;
        for (double x : state.xi) quad += x * x;
        for (double z : state.zeta) quad += z * z;
        return likelihood_info(s) + 0.5 * quad;
    }

    FlatState flat_grad(const FlatState& state) const {
        check_flat(state);
        auto tau = tau_from_zeta(state.zeta);
        auto w = pixel_weights(tau, 0.5);

        std::vector<std::complex<double>> h(n_field());
        layout_.to_harmonic(state.xi, h);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] *= w[i];
        std::vector<std::complex<double>> buf(n_field());
        fft_.backward_complex(h, buf);
        std::vector<double> s(n_field());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = buf[i].real();

        auto influence = residual_influence(s);

        FlatState g;
        g.xi = weighted_analysis(w, influence);
        for (std::size_t i = 0; i < g.xi.size(); ++i) g.xi[i] = -g.xi[i] + state.xi[i];

        std::vector<std::complex<double>> ghat(n_field());
        std::vector<std::complex<double>> gin(influence.begin(), influence.end());
        fft_.forward_complex(gin, ghat);
        std::vector<double> q(n_field());
        for (std::size_t i = 0; i < q.size(); ++i)
            q[i] = (std::conj(ghat[i]) * h[i]).real();
        auto qt = smoothness_.tau_adjoint(bin_sums(binning_, q));
        g.zeta.resize(n_bins());
        for (std::size_t b = 0; b < n_bins(); ++b) g.zeta[b] = -0.5 * qt[b] + state.zeta[b];
        return g;
    }

    // Gauss-Newton curvature of the flat information: J^T N^{-1} J + identity,
    // with J the Jacobian of the data prediction R A(tau(zeta)) xi.
    std::vector<double> flat_curvature_apply(const FlatState& at,
                                             std::span<const double> delta) const {
        auto lik = flat_likelihood_curvature_apply(at, delta);
        for (std::size_t i = 0; i < lik.size(); ++i) lik[i] += delta[i];
        return lik;
    }

    std::vector<double> flat_likelihood_curvature_apply(const FlatState& at,
                                                        std::span<const double> delta) const {
        check_flat(at);
        if (delta.size() != flat_dim())
            throw std::invalid_argument("flat_curvature: wrong direction size");
        auto tau = tau_from_zeta(at.zeta);
        auto w = pixel_weights(tau, 0.5);

        std::vector<std::complex<double>> h(n_field());
        layout_.to_harmonic(at.xi, h);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] *= w[i];

        std::span<const double> dxi = delta.subspan(0, n_field());
        std::span<const double> dzeta = delta.subspan(n_field(), n_bins());

        auto dtau_pix = power_distribute(binning_, smoothness_.tau_from_zeta(dzeta));
        std::vector<std::complex<double>> dh(n_field());
        layout_.to_harmonic(dxi, dh);
        for (std::size_t i = 0; i < dh.size(); ++i)
            dh[i] = dh[i] * w[i] + 0.5 * dtau_pix[i] * h[i];
        std::vector<std::complex<double>> buf(n_field());
        fft_.backward_complex(dh, buf);

        std::vector<double> ds(n_field());
        for (std::size_t i = 0; i < ds.size(); ++i) ds[i] = buf[i].real();
        std::vector<double> y(n_data());
        response_.apply(ds, y);
        for (double& v : y) v /= noise_.sigma * noise_.sigma;
        std::vector<double> t(n_field());
        response_.adjoint_apply(y, t);

        std::vector<double> out(flat_dim());
        auto out_xi = weighted_analysis(w, t);
        std::copy(out_xi.begin(), out_xi.end(), out.begin());

        std::vector<std::complex<double>> that(n_field());
        std::vector<std::complex<double>> tin(t.begin(), t.end());
        fft_.forward_complex(tin, that);
        std::vector<double> q(n_field());
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = (std::conj(that[i]) * h[i]).real();
        auto qz = smoothness_.tau_adjoint(bin_sums(binning_, q));
        for (std::size_t b = 0; b < n_bins(); ++b) out[n_field() + b] = 0.5 * qz[b];
        return out;
    }

    LinearOperator flat_likelihood_curvature(FlatState at) const {
        const std::size_t dim = flat_dim();
        return LinearOperator(
            dim, dim,
            [this, at](std::span<const double> in, std::span<double> out) {
                auto r = flat_likelihood_curvature_apply(at, in);
                std::copy(r.begin(), r.end(), out.begin());
            },
            [this, at](std::span<const double> in, std::span<double> out) {
                auto r = flat_likelihood_curvature_apply(at, in);
                std::copy(r.begin(), r.end(), out.begin());
            });
    }

    // Gauss-Newton curvature of the deep information: the likelihood block,
    // the whitened prior residual rho = A^{-1} s differentiated in (s, tau),
    // and the log-spectrum precision.
    std::vector<double> deep_curvature_apply(const DeepState& at,
                                             std::span<const double> delta) const {
        check_deep(at);
        if (delta.size() != flat_dim())
            throw std::invalid_argument("deep_curvature: wrong direction size");
        auto w_inv = pixel_weights(at.tau, -0.5);
        auto rho = weighted_analysis(w_inv, at.s);

        std::span<const double> ds = delta.subspan(0, n_field());
        std::span<const double> dtau = delta.subspan(n_field(), n_bins());

        auto dtau_pix = power_distribute(binning_, dtau);
        auto z = weighted_analysis(w_inv, ds);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= 0.5 * dtau_pix[i] * rho[i];

        std::vector<double> out(flat_dim());
        std::vector<double> rds(n_data());
        response_.apply(ds, rds);
        for (double& v : rds) v /= noise_.sigma * noise_.sigma;
        std::vector<double> lik_s(n_field());
        response_.adjoint_apply(rds, lik_s);
        auto prior_s = weighted_synthesis(w_inv, z);
        for (std::size_t i = 0; i < n_field(); ++i) out[i] = lik_s[i] + prior_s[i];

        std::vector<double> rz(n_field());
        for (std::size_t i = 0; i < rz.size(); ++i) rz[i] = rho[i] * z[i];
        auto binned = bin_sums(binning_, rz);
        auto tprec = smoothness_.precision_apply(dtau);
        for (std::size_t b = 0; b < n_bins(); ++b)
            out[n_field() + b] = -0.5 * binned[b] + tprec[b];
        return out;
    }

    // |F s|^2 per conjugate-grid pixel.
    std::vector<double> harmonic_power(std::span<const double> s) const {
        std::vector<std::complex<double>> buf(s.begin(), s.end());
        std::vector<std::complex<double>> hat(buf.size());
        fft_.forward_complex(buf, hat);
        std::vector<double> p(hat.size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::norm(hat[i]);
        return p;
    }

private:
    void check_deep(const DeepState& st) const {
        if (st.s.size() != n_field() || st.tau.size() != n_bins())
            throw std::invalid_argument("GpModel: deep state has wrong dimensions");
    }
    void check_flat(const FlatState& st) const {
        if (st.xi.size() != n_field() || st.zeta.size() != n_bins())
            throw std::invalid_argument("GpModel: flat state has wrong dimensions");
    }

    Grid2D grid_;
    Fft2D fft_;
    SpectralBinning binning_;
    XiLayout layout_;
    LogkSmoothness smoothness_;
    Response response_;
    NoiseModel noise_;
    SpectrumPrior prior_;
    std::vector<double> data_;
};

struct ConditionReport {
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    double kappa = 1.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

// Extreme eigenvalues of a symmetric tridiagonal via Sturm-sequence bisection.
inline std::pair<double, double> tridiag_extremes(std::span<const double> alpha,
                                                  std::span<const double> beta) {
    const std::size_t k = alpha.size();
    double lo = alpha[0], hi = alpha[0];
    for (std::size_t i = 0; i < k; ++i) {
        const double bl = i > 0 ? std::abs(beta[i - 1]) : 0.0;
        const double br = i + 1 < k ? std::abs(beta[i]) : 0.0;
        lo = std::min(lo, alpha[i] - bl - br);
        hi = std::max(hi, alpha[i] + bl + br);
    }
    const double scale = std::max({1.0, std::abs(lo), std::abs(hi)});
    auto count_below = [&](double x) {
        std::size_t count = 0;
        double d = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double b2 = i > 0 ? beta[i - 1] * beta[i - 1] : 0.0;
            d = alpha[i] - x - b2 / d;
            if (d == 0.0) d = -1e-300;
            if (d < 0.0) ++count;
        }
        return count;
    };
    auto bisect = [&](bool smallest) {
        double a = lo - scale * 1e-12, b = hi + scale * 1e-12;
        for (int it = 0; it < 120 && (b - a) > 1e-15 * scale; ++it) {
            const double mid = 0.5 * (a + b);
            const std::size_t c = count_below(mid);
            const bool go_left = smallest ? (c >= 1) : (c >= k);
            (go_left ? b : a) = mid;
        }
        return 0.5 * (a + b);
    };
    return {bisect(true), bisect(false)};
}

}  // namespace detail

// Extreme eigenvalues of a symmetric PSD curvature operator and the induced
// condition number (lambda_max + 1) / (lambda_min + 1) of curvature + identity.
// Lanczos with full reorthogonalization; non-convergence is reported in the
// flags, never thrown.
inline ConditionReport condition_report(const LinearOperator& curvature, int max_steps = 0,
                                        double tol = 1e-12) {
    const std::size_t n = curvature.domain_dim();
    if (curvature.codomain_dim() != n)
        throw std::invalid_argument("condition_report: operator must be square");
    std::size_t budget = max_steps > 0 ? static_cast<std::size_t>(max_steps) : n;
    budget = std::min(budget, n);

    std::vector<std::vector<double>> basis;
    std::vector<double> alpha, beta;
    std::vector<double> v = gaussian_vector(RngKey::root(0x51ab1e5eed).child(n), n);
    double nrm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v) x /= nrm;

    ConditionReport report;
    double prev_min = 0.0, prev_max = 0.0;
    int stable = 0;
    for (std::size_t k = 0; k < budget; ++k) {
        auto w = curvature.apply(v);
        if (k == 0) {
            double wn = 0.0;
            for (double x : w) wn += x * x;
            if (wn == 0.0) {  // operator is exactly zero on the probe
                report.iterations = 1;
                report.converged = true;
                return report;
            }
        }
        double a = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
        alpha.push_back(a);
        basis.push_back(v);
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t j = 0; j < basis.size(); ++j) {
                const double proj =
                    std::inner_product(basis[j].begin(), basis[j].end(), w.begin(), 0.0);
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= proj * basis[j][i];
            }
        const double b = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
        report.iterations = static_cast<int>(k + 1);

        auto [rmin, rmax] = detail::tridiag_extremes(alpha, beta);
        const double scale = std::max({1.0, std::abs(rmin), std::abs(rmax)});
        if (k > 0 && std::abs(rmin - prev_min) <= tol * scale &&
            std::abs(rmax - prev_max) <= tol * scale) {
            if (++stable >= 2) {
                report.converged = true;
                prev_min = rmin;
                prev_max = rmax;
                break;
            }
        } else {
            stable = 0;
        }
        prev_min = rmin;
        prev_max = rmax;

        if (b <= 1e-13 * scale) {  // exact invariant subspace reached
            report.converged = true;
            break;
        }
        if (k + 1 == budget) {
            report.converged = budget == n;
            break;
        }
        beta.push_back(b);
        for (double& x : w) x /= b;
        v = std::move(w);
    }

    report.lambda_min = std::max(0.0, prev_min);
    report.lambda_max = std::max(0.0, prev_max);
    report.kappa = (report.lambda_max + 1.0) / (report.lambda_min + 1.0);
    return report;
}

}  // namespace flatprior
