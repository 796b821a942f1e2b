#pragma once

// Variational Gaussian inference for GpModel in either coordinate system.
// Each outer iteration solves the current Gaussian mean exactly with CG,
// draws a frozen antithetic sample set from the current posterior covariance,
// and minimizes the sampled KL over the spectrum coordinates. The deep and
// flat loops share these steps so an alternating schedule degenerates to the
// pure runs bit-for-bit.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flatprior/cg.hpp"
#include "flatprior/errors.hpp"
#include "flatprior/gpmodel.hpp"
#include "flatprior/hierarchy.hpp"
#include "flatprior/optimize.hpp"
#include "flatprior/rng.hpp"

namespace flatprior {

inline double rms_error(const Field2D& a, const Field2D& b) {
    if (!(a.grid == b.grid)) throw std::invalid_argument("rms_error: grid mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline std::uint64_t tau_tag(std::span<const double> tau) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : tau) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    }
    return h;
}

struct WienerResult {
    Field2D mean;
    int cg_iterations = 0;
    double rel_residual = 0.0;
};

// Posterior mean for fixed spectrum: (S^{-1} + R^T N^{-1} R) m = R^T N^{-1} d,
// preconditioned by the prior covariance.
inline WienerResult wiener_filter(const GpModel& model, std::span<const double> tau,
                                  const CgOptions& opts,
                                  std::span<const double> warm = {}) {
    auto w_cov = model.pixel_weights(tau, 1.0);
    auto w_inv = model.pixel_weights(tau, -1.0);
    const double s2 = model.noise().sigma * model.noise().sigma;

    std::vector<double> b(model.n_field(), 0.0);
    {
        std::vector<double> scaled(model.data());
        for (double& v : scaled) v /= s2;
        model.response().adjoint_apply(scaled, b);
    }
    auto apply = [&](std::span<const double> x) {
        auto out = model.spectral_apply(w_inv, x);
        std::vector<double> masked(model.n_data());
        model.response().apply(x, masked);
        for (double& v : masked) v /= s2;
        std::vector<double> lik(model.n_field());
        model.response().adjoint_apply(masked, lik);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += lik[i];
        return out;
    };
    auto precond = [&](std::span<const double> r) { return model.spectral_apply(w_cov, r); };

    auto res = conjugate_gradient(apply, b, opts, precond, warm);
    WienerResult wr;
    wr.mean = Field2D(model.grid(), std::move(res.x));
    wr.cg_iterations = res.iterations;
    wr.rel_residual = res.rel_residual;
    return wr;
}

struct FlatMeanResult {
    std::vector<double> m_xi;
    int cg_iterations = 0;
    double rel_residual = 0.0;
};

// Same mean in white coordinates: (A^T R^T N^{-1} R A + 1) m_xi = A^T R^T N^{-1} d.
// The prior block is already the identity, so no preconditioner is used.
inline FlatMeanResult flat_mean(const GpModel& model, std::span<const double> tau,
                                const CgOptions& opts,
                                std::span<const double> warm = {}) {
    auto w_half = model.pixel_weights(tau, 0.5);
    const double s2 = model.noise().sigma * model.noise().sigma;

    std::vector<double> rb(model.n_field(), 0.0);
    {
        std::vector<double> scaled(model.data());
        for (double& v : scaled) v /= s2;
        model.response().adjoint_apply(scaled, rb);
    }
    auto b = model.weighted_analysis(w_half, rb);

    auto apply = [&](std::span<const double> xi) {
        auto s = model.weighted_synthesis(w_half, xi);
        std::vector<double> masked(model.n_data());
        model.response().apply(s, masked);
        for (double& v : masked) v /= s2;
        std::vector<double> back(model.n_field());
        model.response().adjoint_apply(masked, back);
        auto out = model.weighted_analysis(w_half, back);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += xi[i];
        return out;
    };

    auto res = conjugate_gradient(apply, b, opts, {}, warm);
    return FlatMeanResult{std::move(res.x), res.iterations, res.rel_residual};
}

// One zero-mean draw from the posterior covariance D = (S^{-1} + R^T N^{-1} R)^{-1}
// for fixed spectrum: x = D (S^{-1/2} eta_1 + R^T N^{-1/2} eta_2).
inline std::vector<double> sample_posterior(const GpModel& model, std::span<const double> tau,
                                            RngKey key, const CgOptions& opts) {
    auto eta1 = gaussian_vector(key.child(1), model.n_field());
    auto eta2 = gaussian_vector(key.child(2), model.n_data());
    auto w = model.amplitude_inv_transpose(tau, eta1);
    for (double& v : eta2) v /= model.noise().sigma;
    std::vector<double> scattered(model.n_field());
    model.response().adjoint_apply(eta2, scattered);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += scattered[i];

    auto w_cov = model.pixel_weights(tau, 1.0);
    auto w_inv = model.pixel_weights(tau, -1.0);
    const double s2 = model.noise().sigma * model.noise().sigma;
    auto apply = [&](std::span<const double> x) {
        auto out = model.spectral_apply(w_inv, x);
        std::vector<double> masked(model.n_data());
        model.response().apply(x, masked);
        for (double& v : masked) v /= s2;
        std::vector<double> lik(model.n_field());
        model.response().adjoint_apply(masked, lik);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += lik[i];
        return out;
    };
    auto precond = [&](std::span<const double> r) { return model.spectral_apply(w_cov, r); };
    return conjugate_gradient(apply, w, opts, precond).x;
}

// Flat-coordinate analogue: draw from (1 + A^T R^T N^{-1} R A)^{-1}.
inline std::vector<double> sample_posterior_flat(const GpModel& model,
                                                 std::span<const double> tau, RngKey key,
                                                 const CgOptions& opts) {
    auto w_half = model.pixel_weights(tau, 0.5);
    auto eta1 = gaussian_vector(key.child(1), model.n_field());
    auto eta2 = gaussian_vector(key.child(2), model.n_data());
    for (double& v : eta2) v /= model.noise().sigma;
    std::vector<double> scattered(model.n_field());
    model.response().adjoint_apply(eta2, scattered);
    auto w = model.weighted_analysis(w_half, scattered);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += eta1[i];

    const double s2 = model.noise().sigma * model.noise().sigma;
    auto apply = [&](std::span<const double> xi) {
        auto s = model.weighted_synthesis(w_half, xi);
        std::vector<double> masked(model.n_data());
        model.response().apply(s, masked);
        for (double& v : masked) v /= s2;
        std::vector<double> back(model.n_field());
        model.response().adjoint_apply(masked, back);
        auto out = model.weighted_analysis(w_half, back);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += xi[i];
        return out;
    };
    return conjugate_gradient(apply, w, opts).x;
}

// Frozen antithetic residual draws; the tag pins the spectrum they were drawn
// at so stale reuse is an error rather than a silent bias.
struct KlSampleSet {
    std::vector<std::vector<double>> residuals;
    bool flat_space = false;
    std::uint64_t tag = 0;
};

inline KlSampleSet draw_deep_samples(const GpModel& model, std::span<const double> tau,
                                     int n_pairs, RngKey key, const CgOptions& opts) {
    KlSampleSet set;
    set.tag = tau_tag(tau);
    set.residuals.reserve(static_cast<std::size_t>(n_pairs));
    for (int j = 0; j < n_pairs; ++j)
        set.residuals.push_back(sample_posterior(model, tau, key.child(j), opts));
    return set;
}

inline KlSampleSet draw_flat_samples(const GpModel& model, std::span<const double> tau,
                                     int n_pairs, RngKey key, const CgOptions& opts) {
    KlSampleSet set;
    set.flat_space = true;
    set.tag = tau_tag(tau);
    set.residuals.reserve(static_cast<std::size_t>(n_pairs));
    for (int j = 0; j < n_pairs; ++j)
        set.residuals.push_back(sample_posterior_flat(model, tau, key.child(j), opts));
    return set;
}

// Sampled KL over the deep spectrum coordinates. With the mean and samples
// frozen, only the prior terms depend on tau, and the antithetic average
// collapses to per-bin coefficients: KL(tau) = const + sum_b c_b e^{-tau_b}
// + (1/2) sum_b mult_b tau_b + (1/2) tau^T T^{-1} tau.
class SpectrumKlObjective {
public:
    SpectrumKlObjective(const GpModel& model, const Field2D& mean, const KlSampleSet& set,
                        std::span<const double> tau_at_draw)
        : model_(&model) {
        if (set.flat_space)
            throw ContractError("SpectrumKlObjective: sample set is flat-space");
        if (set.tag != tau_tag(tau_at_draw))
            throw ContractError("SpectrumKlObjective: samples are stale for this spectrum");
        const auto& sb = model.binning();
        coeff_.assign(model.n_bins(), 0.0);
        auto mean_pow = bin_sums(sb, model.harmonic_power(mean.values));
        const double n_total = 2.0 * static_cast<double>(set.residuals.size());
        lik_const_ = model.likelihood_info(mean.values);
        const double s2 = model.noise().sigma * model.noise().sigma;
        for (const auto& x : set.residuals) {
            auto xp = bin_sums(sb, model.harmonic_power(x));
            for (std::size_t b = 0; b < coeff_.size(); ++b) coeff_[b] += xp[b] / n_total;
            std::vector<double> masked(model.n_data());
            model.response().apply(x, masked);
            double acc = 0.0;
            for (double v : masked) acc += v * v;
            lik_const_ += 0.5 * acc / (s2 * static_cast<double>(set.residuals.size()));
        }
        for (std::size_t b = 0; b < coeff_.size(); ++b) coeff_[b] += 0.5 * mean_pow[b];
    }

    double value(std::span<const double> tau) const {
        check_tau_range(tau);
        const auto& mult = model_->binning().multiplicities;
        double v = lik_const_ + model_->smoothness().quadratic_form(tau);
        for (std::size_t b = 0; b < coeff_.size(); ++b)
            v += coeff_[b] * std::exp(-tau[b]) + 0.5 * static_cast<double>(mult[b]) * tau[b];
        return v;
    }

    std::vector<double> gradient(std::span<const double> tau) const {
        check_tau_range(tau);
        const auto& mult = model_->binning().multiplicities;
        auto g = model_->smoothness().precision_apply(tau);
        for (std::size_t b = 0; b < g.size(); ++b)
            g[b] += -coeff_[b] * std::exp(-tau[b]) + 0.5 * static_cast<double>(mult[b]);
        return g;
    }

    OptFunction as_function() const {
        return OptFunction{
            [this](std::span<const double> t) { return value(t); },
            [this](std::span<const double> t) { return gradient(t); }};
    }

private:
    const GpModel* model_;
    std::vector<double> coeff_;
    double lik_const_ = 0.0;
};

// Sampled KL over the flat spectrum coordinates zeta. The likelihood couples
// to zeta through s_j = A(tau(zeta)) xi_j, so each evaluation re-synthesizes
// every frozen sample at the trial spectrum.
class FlatKlObjective {
public:
    FlatKlObjective(const GpModel& model, std::span<const double> m_xi, const KlSampleSet& set,
                    std::span<const double> tau_at_draw)
        : model_(&model) {
        if (!set.flat_space)
            throw ContractError("FlatKlObjective: sample set is deep-space");
        if (set.tag != tau_tag(tau_at_draw))
            throw ContractError("FlatKlObjective: samples are stale for this spectrum");
        xi_const_ = 0.0;
        const double n_total = 2.0 * static_cast<double>(set.residuals.size());
        for (const auto& x : set.residuals) {
            std::vector<double> plus(m_xi.size()), minus(m_xi.size());
            for (std::size_t i = 0; i < m_xi.size(); ++i) {
                plus[i] = m_xi[i] + x[i];
                minus[i] = m_xi[i] - x[i];
                xi_const_ += 0.5 * (plus[i] * plus[i] + minus[i] * minus[i]) / n_total;
            }
            samples_.push_back(std::move(plus));
            samples_.push_back(std::move(minus));
        }
    }

    double value(std::span<const double> zeta) const {
        auto tau = model_->tau_from_zeta(zeta);
        auto w = model_->pixel_weights(tau, 0.5);
        double lik = 0.0;
        for (const auto& xi : samples_)
            lik += model_->likelihood_info(model_->weighted_synthesis(w, xi));
        lik /= static_cast<double>(samples_.size());
        double zq = 0.0;
        for (double z : zeta) zq += z * z;
        return lik + xi_const_ + 0.5 * zq;
    }

    std::vector<double> gradient(std::span<const double> zeta) const {
        auto tau = model_->tau_from_zeta(zeta);
        auto w = model_->pixel_weights(tau, 0.5);
        const auto& sb = model_->binning();
        std::vector<double> qsum(model_->n_field(), 0.0);
        std::vector<std::complex<double>> h(model_->n_field());
        std::vector<std::complex<double>> buf(model_->n_field());
        std::vector<std::complex<double>> ghat(model_->n_field());
        for (const auto& xi : samples_) {
            model_->layout().to_harmonic(xi, h);
            for (std::size_t i = 0; i < h.size(); ++i) h[i] *= w[i];
            model_->fft().backward_complex(h, buf);
            std::vector<double> s(model_->n_field());
            for (std::size_t i = 0; i < s.size(); ++i) s[i] = buf[i].real();
            auto influence = model_->residual_influence(s);
            std::vector<std::complex<double>> gin(influence.begin(), influence.end());
            model_->fft().forward_complex(gin, ghat);
            for (std::size_t i = 0; i < qsum.size(); ++i)
                qsum[i] += (std::conj(ghat[i]) * h[i]).real();
        }
        const double inv_n = 1.0 / static_cast<double>(samples_.size());
        for (double& v : qsum) v *= inv_n;
        auto qt = model_->smoothness().tau_adjoint(bin_sums(sb, qsum));
        std::vector<double> g(zeta.size());
        for (std::size_t b = 0; b < g.size(); ++b) g[b] = -0.5 * qt[b] + zeta[b];
        return g;
    }

    OptFunction as_function() const {
        return OptFunction{
            [this](std::span<const double> z) { return value(z); },
            [this](std::span<const double> z) { return gradient(z); }};
    }

private:
    const GpModel* model_;
    std::vector<std::vector<double>> samples_;
    double xi_const_ = 0.0;
};

inline LbfgsResult minimize_spectrum(const OptFunction& kl, std::vector<double> start,
                                     const LbfgsOptions& opts) {
    return minimize_lbfgs(kl, std::move(start), opts);
}

struct RunConfig {
    int outer_iterations = 20;
    int sample_pairs = 4;
    CgOptions cg{};
    LbfgsOptions spectrum_opt{};
    std::uint64_t seed = 0;
    std::vector<double> tau_init;
    std::pair<int, int> schedule{1, 1};
    bool record_timing = false;
};

struct ConvergenceRecord {
    int iter = 0;
    double eps = 0.0;
    double wall_ms = 0.0;
    std::string mode;
    std::vector<double> spectrum;  // e^{tau} after the update
};

struct RunResult {
    Field2D mean;
    std::vector<double> tau;
    std::vector<double> zeta;
    std::vector<ConvergenceRecord> records;
};

namespace detail {

struct RunState {
    std::vector<double> tau;
    std::vector<double> zeta;
    Field2D mean;
    std::vector<double> m_xi;
};

inline std::vector<double> spectrum_of(std::span<const double> tau) {
    std::vector<double> p(tau.size());
    for (std::size_t b = 0; b < p.size(); ++b) p[b] = std::exp(tau[b]);
    return p;
}

inline void deep_step(const GpModel& model, const RunConfig& cfg, int t, RunState& st,
                      const Field2D& reference, std::vector<ConvergenceRecord>& records) {
    const auto start = std::chrono::steady_clock::now();
    auto wf = wiener_filter(model, st.tau, cfg.cg, st.mean.values);
    st.mean = std::move(wf.mean);
    auto samples = draw_deep_samples(model, st.tau, cfg.sample_pairs,
                                     RngKey::root(cfg.seed).child(static_cast<std::uint64_t>(t)),
                                     cfg.cg);
    SpectrumKlObjective kl(model, st.mean, samples, st.tau);
    auto opt = minimize_spectrum(kl.as_function(), st.tau, cfg.spectrum_opt);
    st.tau = std::move(opt.x);

    ConvergenceRecord rec;
    rec.iter = t;
    rec.eps = rms_error(st.mean, reference);
    rec.mode = "deep";
    rec.spectrum = spectrum_of(st.tau);
    if (cfg.record_timing)
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start).count();
    records.push_back(std::move(rec));
}

inline void flat_step(const GpModel& model, const RunConfig& cfg, int t, RunState& st,
                      const Field2D& reference, std::vector<ConvergenceRecord>& records) {
    const auto start = std::chrono::steady_clock::now();
    auto tau = model.tau_from_zeta(st.zeta);
    auto fm = flat_mean(model, tau, cfg.cg, st.m_xi);
    st.m_xi = std::move(fm.m_xi);
    auto samples = draw_flat_samples(model, tau, cfg.sample_pairs,
                                     RngKey::root(cfg.seed).child(static_cast<std::uint64_t>(t)),
                                     cfg.cg);
    FlatKlObjective kl(model, st.m_xi, samples, tau);
    auto opt = minimize_spectrum(kl.as_function(), st.zeta, cfg.spectrum_opt);
    st.zeta = std::move(opt.x);

    st.tau = model.tau_from_zeta(st.zeta);
    st.mean = Field2D(model.grid(), model.amplitude_apply(st.tau, st.m_xi));

    ConvergenceRecord rec;
    rec.iter = t;
    rec.eps = rms_error(st.mean, reference);
    rec.mode = "flat";
    rec.spectrum = spectrum_of(st.tau);
    if (cfg.record_timing)
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start).count();
    records.push_back(std::move(rec));
}

inline void check_close(std::span<const double> a, std::span<const double> b,
                        const char* what) {
    double scale = 1.0, worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max(scale, std::abs(a[i]));
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    if (worst > 1e-8 * scale)
        throw ConversionError(std::string(what) + ": round-trip residual above 1e-8");
}

// deep -> flat coordinates, with lossless round-trip checks.
inline void to_flat(const GpModel& model, RunState& st) {
    st.zeta = model.zeta_from_tau(st.tau);
    check_close(st.tau, model.tau_from_zeta(st.zeta), "tau/zeta conversion");
    st.m_xi = model.amplitude_inverse(st.tau, st.mean.values);
    check_close(st.mean.values, model.amplitude_apply(st.tau, st.m_xi), "mean conversion");
}

// flat -> deep coordinates.
inline void to_deep(const GpModel& model, RunState& st) {
    st.tau = model.tau_from_zeta(st.zeta);
    check_close(st.zeta, model.zeta_from_tau(st.tau), "zeta/tau conversion");
    st.mean = Field2D(model.grid(), model.amplitude_apply(st.tau, st.m_xi));
    check_close(st.m_xi, model.amplitude_inverse(st.tau, st.mean.values), "mean conversion");
}

inline RunState initial_state(const GpModel& model, const RunConfig& cfg) {
    if (cfg.tau_init.size() != model.n_bins())
        throw std::invalid_argument("RunConfig: tau_init has wrong bin count");
    RunState st;
    st.tau = cfg.tau_init;
    st.zeta = model.zeta_from_tau(st.tau);
    st.mean = Field2D(model.grid());
    st.m_xi.assign(model.n_field(), 0.0);
    return st;
}

inline RunResult finish(const GpModel& model, RunState st,
                        std::vector<ConvergenceRecord> records) {
    RunResult rr;
    rr.tau = st.tau;
    rr.zeta = model.zeta_from_tau(st.tau);
    rr.mean = std::move(st.mean);
    rr.records = std::move(records);
    return rr;
}

}  // namespace detail

inline RunResult run_deep(const GpModel& model, const RunConfig& cfg,
                          const Field2D& reference) {
    auto st = detail::initial_state(model, cfg);
    std::vector<ConvergenceRecord> records;
    for (int t = 0; t < cfg.outer_iterations; ++t)
        detail::deep_step(model, cfg, t, st, reference, records);
    return detail::finish(model, std::move(st), std::move(records));
}

inline RunResult run_flat(const GpModel& model, const RunConfig& cfg,
                          const Field2D& reference) {
    auto st = detail::initial_state(model, cfg);
    std::vector<ConvergenceRecord> records;
    for (int t = 0; t < cfg.outer_iterations; ++t)
        detail::flat_step(model, cfg, t, st, reference, records);
    return detail::finish(model, std::move(st), std::move(records));
}

// Interleaves schedule.first deep steps with schedule.second flat steps,
// converting the variational state losslessly at every switch.
inline RunResult run_alternating(const GpModel& model, const RunConfig& cfg,
                                 const Field2D& reference) {
    const auto [deep_n, flat_n] = cfg.schedule;
    if (deep_n < 0 || flat_n < 0 || (deep_n == 0 && flat_n == 0))
        throw std::invalid_argument("run_alternating: schedule needs a positive phase");
    auto st = detail::initial_state(model, cfg);
    std::vector<ConvergenceRecord> records;
    bool in_flat = deep_n == 0;
    int t = 0;
    while (t < cfg.outer_iterations) {
        if (!in_flat) {
            for (int i = 0; i < deep_n && t < cfg.outer_iterations; ++i)
                detail::deep_step(model, cfg, t++, st, reference, records);
            if (t < cfg.outer_iterations && flat_n > 0) {
                detail::to_flat(model, st);
                in_flat = true;
            }
        } else {
            for (int i = 0; i < flat_n && t < cfg.outer_iterations; ++i)
                detail::flat_step(model, cfg, t++, st, reference, records);
            if (t < cfg.outer_iterations && deep_n > 0) {
                detail::to_deep(model, st);
                in_flat = false;
            }
        }
    }
    return detail::finish(model, std::move(st), std::move(records));
}

struct MapOptions {
    LbfgsOptions opt{.max_iterations = 200, .memory = 20, .grad_tol = 1e-10,
                     .max_line_trials = 40, .armijo_c1 = 1e-4};
    double fd_step = 1e-6;
};

struct MapResult {
    std::vector<double> xi;
    std::vector<double> theta;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Posterior mode in standardized coordinates. Gradients by central finite
// differences; the models this targets have a handful of parameters.
inline MapResult map_estimate(const HierarchicalModel& model, const LikelihoodFn& likelihood,
                              std::vector<double> xi0, const MapOptions& mo = {}) {
    OptFunction f;
    f.value = [&model, &likelihood](std::span<const double> xi) {
        return flat_information(model, xi, likelihood);
    };
    f.gradient = [&model, &likelihood, &mo, &f](std::span<const double> xi) {
        std::vector<double> g(xi.size());
        std::vector<double> probe(xi.begin(), xi.end());
        for (std::size_t i = 0; i < probe.size(); ++i) {
            const double h = mo.fd_step * std::max(1.0, std::abs(probe[i]));
            const double keep = probe[i];
            probe[i] = keep + h;
            const double fp = f.value(probe);
            probe[i] = keep - h;
            const double fm = f.value(probe);
            probe[i] = keep;
            g[i] = (fp - fm) / (2.0 * h);
        }
        return g;
    };
    auto res = minimize_lbfgs(f, std::move(xi0), mo.opt);
    MapResult mr;
    mr.theta = forward_transform(model, res.x);
    mr.xi = std::move(res.x);
    mr.grad_norm = res.grad_norm;
    mr.iterations = res.iterations;
    mr.converged = res.converged;
    return mr;
}

}  // namespace flatprior
