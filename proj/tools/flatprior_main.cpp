// Command-line front end: `flatprior run` drives a synthetic-data scenario,
// `flatprior check` exercises the built-in numerical self-checks.
// Exit codes: 0 success, 1 usage problems, 2 numerical contract violations.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flatprior/experiment.hpp"
#include "flatprior/hierarchy.hpp"
#include "flatprior/inference.hpp"

namespace {

using namespace flatprior;

int do_run(ExperimentConfig cfg) {
    auto outcome = run_experiment(cfg);
    std::printf("mode=%s iterations=%zu final_eps=%.6g out=%s\n", cfg.mode.c_str(),
                outcome.records.size(), outcome.final_eps, cfg.out_dir.c_str());
    return 0;
}

struct CheckFailure {
    std::string detail;
};

void expect(bool ok, const std::string& detail) {
    if (!ok) throw CheckFailure{detail};
}

double ks_statistic(std::vector<double> sorted_u) {
    std::sort(sorted_u.begin(), sorted_u.end());
    const double n = static_cast<double>(sorted_u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sorted_u.size(); ++i) {
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max({d, std::abs(sorted_u[i] - lo), std::abs(sorted_u[i] - hi)});
    }
    return d;
}

void check_round_trip() {
    double worst = 0.0;
    for (int i = 0; i <= 2000; ++i) {
        const double xi = -6.0 + 12.0 * i / 2000.0;
        const double back = std_normal_quantile(std_normal_cdf(xi));
        worst = std::max(worst, std::abs(back - xi));
    }
    expect(worst <= 1e-10, "round-trip error " + std::to_string(worst));
}

void check_erf_reference() {
    const double want = 0.84270079294971486934;
    expect(std::abs(flatprior::erf(1.0) - want) <= 1e-14, "erf(1) off");
}

void check_jacobian_cancellation() {
    auto model = make_exponential_gaussian_model(1.0, 1.0);
    LikelihoodFn lik0 = [](std::span<const double>) { return 0.0; };
    auto key = RngKey::root(42);
    std::vector<double> diffs;
    for (int t = 0; t < 100; ++t) {
        auto xi = gaussian_vector(key.child(t), 2);
        for (double& x : xi) x *= 0.8;
        const auto theta = forward_transform(model, xi);
        diffs.push_back(deep_information(model, theta, lik0) - log_jacobian(model, xi) -
                        flat_information(model, xi, lik0));
    }
    double mean = 0.0;
    for (double d : diffs) mean += d;
    mean /= diffs.size();
    double var = 0.0;
    for (double d : diffs) var += (d - mean) * (d - mean);
    const double sd = std::sqrt(var / diffs.size());
    expect(sd < 1e-8, "cancellation spread " + std::to_string(sd));
}

void check_fft() {
    Grid2D grid(16, 1.0);
    Fft2D fft(grid);
    Field2D f(grid, gaussian_vector(RngKey::root(3), grid.n_pixels()));
    auto round = fft.adjoint(fft.forward(f));
    double worst = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i)
        worst = std::max(worst, std::abs(round.values[i] - f.values[i]));
    expect(worst <= 1e-12, "fft round trip " + std::to_string(worst));
}

void check_amplitude_factorization() {
    Grid2D grid(8, 1.0);
    GpModel model(grid, 4, {}, NoiseModel(1.0), SpectrumPrior{}, {});
    std::vector<double> tau(4);
    for (std::size_t b = 0; b < tau.size(); ++b)
        tau[b] = 2.0 * uniform01(RngKey::root(9), b) - 1.0;
    auto x = gaussian_vector(RngKey::root(10), grid.n_pixels());
    auto lhs = model.amplitude_apply(tau, model.amplitude_adjoint(tau, x));
    auto rhs = model.spectral_apply(model.pixel_weights(tau, 1.0), x);
    double worst = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i)
        worst = std::max(worst, std::abs(lhs[i] - rhs[i]));
    expect(worst <= 1e-10, "A A^T vs S " + std::to_string(worst));
}

void check_scalar_posterior() {
    Grid2D grid(4, 1.0);
    const double d = 0.7, sn = 0.5, c = std::log(2.0);
    GpModel model(grid, 4, {5}, NoiseModel(sn), SpectrumPrior{}, {d});
    std::vector<double> tau(4, c);
    auto wf = wiener_filter(model, tau, CgOptions{1e-12, 100});
    const double want = std::exp(c) / (std::exp(c) + sn * sn) * d;
    expect(std::abs(wf.mean.values[5] - want) <= 1e-8, "scalar posterior mean off");
}

void check_empty_mask_condition() {
    Grid2D grid(8, 1.0);
    GpModel model(grid, 4, {}, NoiseModel(0.3), SpectrumPrior{}, {});
    FlatState at{gaussian_vector(RngKey::root(12), grid.n_pixels()),
                 std::vector<double>(4, 0.0)};
    auto rep = condition_report(model.flat_likelihood_curvature(at));
    expect(rep.kappa == 1.0, "kappa != 1 on empty mask");
}

void check_determinism() {
    ExperimentConfig cfg;
    cfg.n_side = 16;
    cfg.coverage = 0.1;
    cfg.mode = "deep";
    cfg.outer_iterations = 2;
    cfg.seed = 7;
    Experiment a(cfg), b(cfg);
    auto ra = a.run(), rb = b.run();
    expect(ra.records.size() == rb.records.size(), "record counts differ");
    for (std::size_t i = 0; i < ra.records.size(); ++i) {
        expect(ra.records[i].eps == rb.records[i].eps, "eps differs between replays");
        expect(ra.records[i].spectrum == rb.records[i].spectrum, "spectrum differs");
    }
}

void check_exponential_pushforward() {
    const int n = 10000;
    std::vector<double> u(n);
    auto xi = gaussian_vector(RngKey::root(99), n);
    const ExpHyper rate(1.0);
    for (int i = 0; i < n; ++i)
        u[i] = exp_cdf(standardize_exponential(xi[i], rate), rate);
    const double d = ks_statistic(std::move(u));
    expect(std::sqrt(double(n)) * d <= 1.6276, "KS statistic too large");
}

int do_check() {
    const std::vector<std::pair<std::string, std::function<void()>>> checks = {
        {"cdf/quantile round trip", check_round_trip},
        {"erf reference value", check_erf_reference},
        {"jacobian cancellation", check_jacobian_cancellation},
        {"fft round trip", check_fft},
        {"amplitude factorizes covariance", check_amplitude_factorization},
        {"scalar posterior mean", check_scalar_posterior},
        {"empty-mask condition number", check_empty_mask_condition},
        {"deterministic replay", check_determinism},
        {"exponential pushforward", check_exponential_pushforward},
    };
    int failures = 0;
    for (const auto& [name, fn] : checks) {
        try {
            fn();
            std::printf("ok - %s\n", name.c_str());
        } catch (const CheckFailure& f) {
            ++failures;
            std::printf("FAIL - %s: %s\n", name.c_str(), f.detail.c_str());
        } catch (const std::exception& e) {
            ++failures;
            std::printf("FAIL - %s: %s\n", name.c_str(), e.what());
        }
    }
    return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"variational inference on gaussian random fields in standardized coordinates"};
    app.require_subcommand(1);

    auto* run_cmd = app.add_subcommand("run", "run a synthetic-data scenario");
    std::string preset, mode = "flat", out_dir, manifest_path, schedule_str;
    int n_side = 64, iters = 20, samples = 4, bins = 0, inner = 20;
    std::uint64_t seed = 1;
    double coverage = -1.0, noise = 0.01, cg_tol = 1e-7, pixel = 1.0;
    bool record_timing = false;
    run_cmd->add_option("--preset", preset, "coverage preset: full, scattered, sparse");
    run_cmd->add_option("--mode", mode, "deep, flat, or alternating");
    run_cmd->add_option("--n-side", n_side, "grid side length (even, >= 4)");
    run_cmd->add_option("--seed", seed, "rng seed");
    run_cmd->add_option("--iters", iters, "outer iterations");
    run_cmd->add_option("--out", out_dir, "output directory")->required();
    run_cmd->add_option("--coverage", coverage, "data coverage fraction in (0,1]");
    run_cmd->add_option("--noise", noise, "noise standard deviation");
    run_cmd->add_option("--cg-tol", cg_tol, "conjugate-gradient tolerance");
    run_cmd->add_option("--samples", samples, "antithetic sample pairs per iteration");
    run_cmd->add_option("--schedule", schedule_str, "alternating schedule as DEEP,FLAT");
    run_cmd->add_option("--bins", bins, "spectral bins (0 = n_side/2)");
    run_cmd->add_option("--inner", inner, "inner minimizer iterations");
    run_cmd->add_option("--pixel-size", pixel, "pixel size");
    run_cmd->add_flag("--record-timing", record_timing,
                      "record wall-clock times (breaks byte reproducibility)");
    run_cmd->add_option("--manifest", manifest_path,
                        "re-run from an emitted manifest (other flags ignored)");

    auto* check_cmd = app.add_subcommand("check", "run built-in numerical self-checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (check_cmd->parsed()) return do_check();

        ExperimentConfig cfg;
        if (!manifest_path.empty()) {
            cfg = config_from_manifest(manifest_path);
        } else {
            cfg.n_side = n_side;
            cfg.pixel_size = pixel;
            cfg.n_bins = static_cast<std::size_t>(bins);
            cfg.sigma_n = noise;
            cfg.seed = seed;
            cfg.mode = mode;
            cfg.outer_iterations = iters;
            cfg.cg_tol = cg_tol;
            cfg.sample_pairs = samples;
            cfg.inner_iterations = inner;
            cfg.record_timing = record_timing;
            if (!preset.empty()) apply_preset(cfg, preset);
            if (coverage > 0.0) cfg.coverage = coverage;
            if (!schedule_str.empty()) {
                int a = 0, b = 0;
                if (std::sscanf(schedule_str.c_str(), "%d,%d", &a, &b) != 2)
                    throw std::invalid_argument("schedule must look like 1,1");
                cfg.schedule = {a, b};
            }
        }
        cfg.out_dir = out_dir;
        return do_run(std::move(cfg));
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    }
}
