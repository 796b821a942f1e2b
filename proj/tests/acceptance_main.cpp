// Acceptance gate: one pass/fail line per shipped guarantee, nonzero exit if
// any fails. Each check carries its tolerance inline so the output is the
// contract.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "flatprior/experiment.hpp"
#include "flatprior/hierarchy.hpp"
#include "flatprior/inference.hpp"
#include "flatprior/rng.hpp"

#include "support/oracles.hpp"

using namespace flatprior;

namespace {

bool g_all_ok = true;

void report(int idx, const char* name, bool ok, const std::string& detail) {
    std::printf("%s - %d %s (%s)\n", ok ? "pass" : "FAIL", idx, name, detail.c_str());
    if (!ok) g_all_ok = false;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

std::vector<double> clamped_gaussian(RngKey key, std::size_t n, double bound) {
    auto v = gaussian_vector(key, n);
    for (double& x : v) x = std::clamp(x, -bound, bound);
    return v;
}

double rel_norm_error(std::span<const double> got, std::span<const double> want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num / den);
}

// 1. quantile/CDF round trips and sampling pushforward of the demo hierarchy
void check_transform_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();

    double worst_rt = 0.0;
    for (int i = 0; i <= 24000; ++i) {
        const double xi = -6.0 + 12.0 * i / 24000.0;
        const double back = std::fabs(std_normal_quantile(std_normal_cdf(xi)) - xi);
        worst_rt = std::max(worst_rt, back);
    }
    for (int i = 1; i < 4000; ++i) {
        const double u = double(i) / 4000.0;
        const double back =
            std::fabs(exp_cdf(exp_quantile(UnitInterval(u), ExpHyper(1.0)), ExpHyper(1.0)) - u);
        worst_rt = std::max(worst_rt, back);
    }

    auto model = make_exponential_gaussian_model(0.0, 1.0);
    const int n = 100000;
    std::vector<double> u_sigma(n), u_alpha(n);
    for (int t = 0; t < n; ++t) {
        auto xi = gaussian_vector(RngKey::root(0xACC1).child(t), 2);
        auto theta = forward_transform(model, xi);
        u_sigma[t] = exp_cdf(theta[0], ExpHyper(1.0));
        u_alpha[t] = gaussian_cdf(theta[1], GaussHyper(0.0, theta[0]));
    }
    const double ks_sigma = oracle::ks_sqrtn_d(u_sigma);
    const double ks_alpha = oracle::ks_sqrtn_d(u_alpha);

    const double secs = seconds_since(t0);
    const bool ok = worst_rt < 1e-10 && ks_sigma < oracle::kKsCritical01 &&
                    ks_alpha < oracle::kKsCritical01 && secs < 10.0;
    report(1, "transform fidelity", ok,
           fmt("round trip %.2e < 1e-10; KS sigma %.3f alpha %.3f < %.4f; %.1f s < 10 s",
               worst_rt, ks_sigma, ks_alpha, oracle::kKsCritical01, secs));
}

// 2. deep info - flat info - log-Jacobian is constant across coordinates
void check_jacobian_cancellation() {
    const auto t0 = std::chrono::steady_clock::now();
    auto model = make_exponential_gaussian_model(0.5, 2.0);
    LikelihoodFn lik = [](std::span<const double> theta) {
        return 0.3 * theta[1] * theta[1] + 0.1 * theta[0];
    };

    std::vector<double> vals;
    for (int t = 0; t < 100; ++t) {
        auto xi = clamped_gaussian(RngKey::root(0xACC2).child(t), 2, 4.0);
        auto theta = forward_transform(model, xi);
        vals.push_back(deep_information(model, theta, lik) - log_jacobian(model, xi) -
                       flat_information(model, xi, lik));
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / double(vals.size()));

    const double secs = seconds_since(t0);
    const bool ok = sd < 1e-8 && secs < 1.0;
    report(2, "jacobian cancellation", ok,
           fmt("std %.2e < 1e-8 over 100 points; %.2f s < 1 s", sd, secs));
}

// 3. with no data the flat-coordinate mode is the prior median
void check_map_median() {
    auto model = make_exponential_gaussian_model(0.0, 1.0);
    LikelihoodFn null = [](std::span<const double>) { return 0.0; };
    auto res = map_estimate(model, null, {0.7, -0.4});
    const double err = std::fabs(res.theta[0] - std::log(2.0));
    const bool ok = res.converged && err < 1e-6;
    report(3, "map at the prior median", ok,
           fmt("|sigma - ln 2| = %.2e < 1e-6, converged=%d", err, int(res.converged)));
}

// 4. CG Wiener filter vs dense solves; amplitude factorization vs covariance
void check_oracle_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();

    double worst_cg = 0.0;
    {
        Grid2D g(16, 1.0);
        const std::size_t n = g.n_pixels();
        const CgOptions opts{1e-10, 4000};
        for (int inst = 0; inst < 5; ++inst) {
            auto key = RngKey::root(0xACC4).child(inst);
            auto sel = gaussian_vector(key.child(0), n);
            std::vector<std::size_t> mask;
            for (std::size_t i = 0; i < n; ++i)
                if (sel[i] > 0.1) mask.push_back(i);
            auto d = gaussian_vector(key.child(1), mask.size());
            const double sigma = 0.3 + 0.15 * inst;
            GpModel model(g, 8, mask, NoiseModel(sigma), SpectrumPrior{}, d);
            auto tau = clamped_gaussian(key.child(2), model.n_bins(), 1.0);

            auto wr = wiener_filter(model, tau, opts);

            auto w_inv = model.pixel_weights(tau, -1.0);
            Eigen::MatrixXd M = oracle::densify(
                [&](const std::vector<double>& x) { return model.spectral_apply(w_inv, x); },
                n, n);
            Eigen::VectorXd b = Eigen::VectorXd::Zero(Eigen::Index(n));
            for (std::size_t j = 0; j < mask.size(); ++j) {
                M(Eigen::Index(mask[j]), Eigen::Index(mask[j])) += 1.0 / (sigma * sigma);
                b(Eigen::Index(mask[j])) = d[j] / (sigma * sigma);
            }
            Eigen::VectorXd md = M.ldlt().solve(b);
            std::vector<double> dense(md.data(), md.data() + md.size());
            worst_cg = std::max(worst_cg, rel_norm_error(wr.mean.values, dense));
        }
    }

    double worst_fact = 0.0;
    {
        Grid2D g(8, 1.0);
        const std::size_t n = g.n_pixels();
        std::vector<std::size_t> mask = {0};
        GpModel model(g, 4, mask, NoiseModel(1.0), SpectrumPrior{}, {0.0});
        auto tau = clamped_gaussian(RngKey::root(0xACC5), model.n_bins(), 1.5);
        auto amp = model.amplitude_operator(tau);
        Eigen::MatrixXd A = oracle::densify(
            [&](const std::vector<double>& x) { return amp.apply(x); }, n, n);
        auto cov = model.covariance_operator(tau);
        Eigen::MatrixXd S = oracle::densify(
            [&](const std::vector<double>& x) { return cov.apply(x); }, n, n);
        worst_fact = (A * A.transpose() - S).cwiseAbs().maxCoeff();
    }

    const double secs = seconds_since(t0);
    const bool ok = worst_cg < 1e-6 && worst_fact < 1e-10 && secs < 30.0;
    report(4, "solver and factorization oracles", ok,
           fmt("CG vs dense %.2e < 1e-6 over 5 instances; |AA^T - S| %.2e < 1e-10; %.1f s < 30 s",
               worst_cg, worst_fact, secs));
}

// 5. information and sampled-KL gradients vs central finite differences
void check_gradients() {
    Grid2D g(8, 1.0);
    std::vector<std::size_t> mask = {2, 7, 13, 21, 30, 38, 44, 51, 59, 62};
    auto d = gaussian_vector(RngKey::root(0xACC6), mask.size());
    GpModel model(g, 8, mask, NoiseModel(0.5), SpectrumPrior{}, d);
    const CgOptions opts{1e-10, 4000};

    auto pack = [](std::span<const double> a, std::span<const double> b) {
        std::vector<double> out(a.begin(), a.end());
        out.insert(out.end(), b.begin(), b.end());
        return out;
    };

    double worst = 0.0;
    {
        auto s = gaussian_vector(RngKey::root(0xACC7), model.n_field());
        auto tau = clamped_gaussian(RngKey::root(0xACC8), model.n_bins(), 1.0);
        auto grad = model.deep_grad(DeepState{s, tau});
        auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) {
                DeepState st;
                st.s.assign(x.begin(), x.begin() + model.n_field());
                st.tau.assign(x.begin() + model.n_field(), x.end());
                return model.deep_info(st);
            },
            pack(s, tau), 1e-4);
        worst = std::max(worst, rel_norm_error(pack(grad.s, grad.tau), fd));
    }
    {
        auto xi = gaussian_vector(RngKey::root(0xACC9), model.n_field());
        auto zeta = clamped_gaussian(RngKey::root(0xACCA), model.n_bins(), 1.0);
        auto grad = model.flat_grad(FlatState{xi, zeta});
        auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) {
                FlatState st;
                st.xi.assign(x.begin(), x.begin() + model.n_field());
                st.zeta.assign(x.begin() + model.n_field(), x.end());
                return model.flat_info(st);
            },
            pack(xi, zeta), 1e-4);
        worst = std::max(worst, rel_norm_error(pack(grad.xi, grad.zeta), fd));
    }
    {
        auto tau = clamped_gaussian(RngKey::root(0xACCB), model.n_bins(), 0.8);
        auto wr = wiener_filter(model, tau, opts);
        auto set = draw_deep_samples(model, tau, 3, RngKey::root(0xACCC), opts);
        SpectrumKlObjective kl(model, wr.mean, set, tau);
        auto grad = kl.gradient(tau);
        auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& t) { return kl.value(t); }, tau, 1e-5);
        worst = std::max(worst, rel_norm_error(grad, fd));
    }
    {
        auto zeta = clamped_gaussian(RngKey::root(0xACCD), model.n_bins(), 1.0);
        auto tau = model.tau_from_zeta(zeta);
        auto fm = flat_mean(model, tau, opts);
        auto set = draw_flat_samples(model, tau, 3, RngKey::root(0xACCE), opts);
        FlatKlObjective kl(model, fm.m_xi, set, tau);
        auto grad = kl.gradient(zeta);
        auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& z) { return kl.value(z); }, zeta, 1e-5);
        worst = std::max(worst, rel_norm_error(grad, fd));
    }

    const bool ok = worst < 1e-4;
    report(5, "gradient correctness", ok,
           fmt("worst relative error %.2e < 1e-4 across deep/flat info and both KL objectives",
               worst));
}

// 6. flat curvature bounded below by the identity; reported conditioning is
// the dense truth; empty mask is exactly unconditioned
void check_conditioning() {
    Grid2D g(8, 1.0);
    const std::size_t n_bins = 8;

    double worst_lmin = 1e300, worst_kappa = 0.0;
    for (int inst = 0; inst < 3; ++inst) {
        auto key = RngKey::root(0xACCF).child(inst);
        auto sel = gaussian_vector(key.child(0), g.n_pixels());
        std::vector<std::size_t> mask;
        for (std::size_t i = 0; i < g.n_pixels(); ++i)
            if (sel[i] > 0.4) mask.push_back(i);
        auto d = gaussian_vector(key.child(1), mask.size());
        GpModel model(g, n_bins, mask, NoiseModel(0.4), SpectrumPrior{}, d);
        FlatState at{gaussian_vector(key.child(2), model.n_field()),
                     clamped_gaussian(key.child(3), model.n_bins(), 1.0)};
        const std::size_t dim = model.flat_dim();

        Eigen::MatrixXd C = oracle::densify(
            [&](const std::vector<double>& x) { return model.flat_curvature_apply(at, x); },
            dim, dim);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (C + C.transpose()));
        worst_lmin = std::min(worst_lmin, es.eigenvalues().minCoeff());

        auto rep = condition_report(model.flat_likelihood_curvature(at));
        Eigen::MatrixXd L = oracle::densify(
            [&](const std::vector<double>& x) {
                return model.flat_likelihood_curvature_apply(at, x);
            },
            dim, dim);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> el(0.5 * (L + L.transpose()));
        const double lmax = el.eigenvalues().maxCoeff();
        const double lmin = std::max(0.0, el.eigenvalues().minCoeff());
        worst_kappa = std::max(worst_kappa,
                               std::fabs(rep.kappa - (lmax + 1.0) / (lmin + 1.0)));
    }

    GpModel empty(g, n_bins, {}, NoiseModel(1.0), SpectrumPrior{}, {});
    FlatState at0{std::vector<double>(g.n_pixels(), 0.0), std::vector<double>(n_bins, 0.0)};
    auto rep0 = condition_report(empty.flat_likelihood_curvature(at0));
    const bool empty_exact = rep0.kappa == 1.0;

    const bool ok = worst_lmin >= 1.0 - 1e-6 && worst_kappa <= 1e-6 && empty_exact;
    report(6, "curvature conditioning bound", ok,
           fmt("lambda_min %.9f >= 1 - 1e-6; |kappa - dense| %.2e <= 1e-6; empty-mask kappa==1 %s",
               worst_lmin, worst_kappa, empty_exact ? "exact" : "VIOLATED"));
}

// 7. desk-scale scenario ordering: flat converges at least as well everywhere,
// sparse data stalls the deep loop, alternating tracks the best pure run
void check_scenarios() {
    const auto t0 = std::chrono::steady_clock::now();

    auto base = [] {
        ExperimentConfig cfg;
        cfg.seed = 5;
        return cfg;
    };

    auto final_eps = [](const Experiment& ex, const std::string& mode) {
        auto rc = ex.run_config();
        RunResult rr = mode == "deep"   ? run_deep(ex.model, rc, ex.reference)
                       : mode == "flat" ? run_flat(ex.model, rc, ex.reference)
                                        : run_alternating(ex.model, rc, ex.reference);
        return rr.records.back().eps;
    };

    double deep_eps[3], flat_eps[3];
    const char* presets[3] = {"full", "scattered", "sparse"};
    double alt_scattered = 0.0;
    for (int p = 0; p < 3; ++p) {
        auto cfg = base();
        apply_preset(cfg, presets[p]);
        Experiment ex(cfg);
        deep_eps[p] = final_eps(ex, "deep");
        flat_eps[p] = final_eps(ex, "flat");
        if (p == 1) alt_scattered = final_eps(ex, "alternating");
    }

    const bool ordering = flat_eps[0] <= deep_eps[0] && flat_eps[1] <= deep_eps[1] &&
                          flat_eps[2] <= deep_eps[2];
    const double sparse_ratio = deep_eps[2] / flat_eps[2];
    const bool plateau = sparse_ratio >= 2.0;
    const double alt_bound = 1.1 * std::min(deep_eps[1], flat_eps[1]);
    const bool tracks = alt_scattered <= alt_bound;
    const double secs = seconds_since(t0);

    const bool ok = ordering && plateau && tracks && secs < 600.0;
    report(7, "scenario convergence ordering", ok,
           fmt("flat<=deep: full %.4f/%.4f scattered %.4f/%.4f sparse %.4f/%.4f; "
               "sparse ratio %.2f >= 2; alternating %.4f <= %.4f; %.0f s < 600 s",
               flat_eps[0], deep_eps[0], flat_eps[1], deep_eps[1], flat_eps[2], deep_eps[2],
               sparse_ratio, alt_scattered, alt_bound, secs));
}

// 8. a manifest pins every output byte
void check_determinism() {
    namespace fs = std::filesystem;
    auto dir1 = fs::temp_directory_path() / "flatprior_accept_det1";
    auto dir2 = fs::temp_directory_path() / "flatprior_accept_det2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    ExperimentConfig cfg;
    cfg.n_side = 16;
    cfg.n_bins = 8;
    cfg.coverage = 0.3;
    cfg.seed = 12;
    cfg.mode = "alternating";
    cfg.outer_iterations = 2;
    cfg.sample_pairs = 2;
    cfg.inner_iterations = 5;
    cfg.out_dir = dir1.string();
    run_experiment(cfg);

    auto replay = config_from_manifest((dir1 / "manifest.json").string());
    replay.out_dir = dir2.string();
    run_experiment(replay);

    std::size_t compared = 0, mismatched = 0;
    for (const auto& entry : fs::directory_iterator(dir1)) {
        const auto twin = dir2 / entry.path().filename();
        ++compared;
        if (!fs::exists(twin) || oracle::read_file_bytes(entry.path().string()) !=
                                     oracle::read_file_bytes(twin.string()))
            ++mismatched;
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    const bool ok = compared >= 9 && mismatched == 0;
    report(8, "manifest-pinned determinism", ok,
           fmt("%zu files compared, %zu mismatched", compared, mismatched));
}

}  // namespace

int main() {
    check_transform_fidelity();
    check_jacobian_cancellation();
    check_map_median();
    check_oracle_equivalence();
    check_gradients();
    check_conditioning();
    check_scenarios();
    check_determinism();
    std::printf("%s\n", g_all_ok ? "all acceptance checks passed" : "ACCEPTANCE FAILURES");
    return g_all_ok ? 0 : 1;
}
