#pragma once

// Synthetic-data experiment harness: draws a ground-truth field from a bent
// power-law spectrum with a Gaussian bump in ln k, masks and noises it,
// builds the inference model, and drives one of the outer loops, writing
// convergence CSVs, spectrum snapshots, and a reproducibility manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flatprior/field_io.hpp"
#include "flatprior/inference.hpp"

namespace flatprior {

struct TruthSpectrum {
    double p0 = 1.0;
    double knee_factor = 1.0;   // knee at knee_factor * fundamental frequency
    double slope = 6.0;         // asymptotic power-law index
    double bump_rel_amp = 0.3;  // bump height relative to the base curve there
    double bump_logk_frac = 0.5;
    double bump_width = 0.3;    // gaussian width in ln k
};

struct ExperimentConfig {
    int n_side = 64;
    double pixel_size = 1.0;
    std::size_t n_bins = 0;  // 0 resolves to n_side / 2
    double coverage = 1.0;
    double sigma_n = 0.01;
    TruthSpectrum truth;
    double sigma_smooth = 100.0;
    double sigma_offset = 10.0;
    std::uint64_t seed = 1;
    std::string mode = "flat";  // deep | flat | alternating
    int outer_iterations = 20;
    std::pair<int, int> schedule{1, 1};
    double cg_tol = 1e-7;
    int cg_max_iter = 2000;
    int sample_pairs = 4;
    int inner_iterations = 20;
    bool record_timing = false;
    std::string out_dir;
};

inline void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
    if (preset == "full")
        cfg.coverage = 1.0;
    else if (preset == "scattered")
        cfg.coverage = 0.1;
    else if (preset == "sparse")
        cfg.coverage = 0.005;
    else
        throw std::invalid_argument("unknown preset: " + preset);
}

// Bent power law plus a log-Gaussian bump, evaluated on the bin centers.
inline std::vector<double> truth_spectrum_values(const SpectralBinning& sb,
                                                 const TruthSpectrum& ts) {
    const double k_fund = sb.bin_centers[1];
    const double k_knee = ts.knee_factor * k_fund;
    auto base = [&](double k) {
        const double r = k / k_knee;
        return ts.p0 * std::pow(1.0 + r * r, -0.5 * ts.slope);
    };
    const double ln_lo = std::log(sb.bin_centers[1]);
    const double ln_hi = std::log(sb.bin_centers[sb.n_bins - 1]);
    const double ln_bump = ln_lo + ts.bump_logk_frac * (ln_hi - ln_lo);
    const double amp = ts.bump_rel_amp * base(std::exp(ln_bump));

    std::vector<double> p(sb.n_bins);
    p[0] = ts.p0;
    for (std::size_t b = 1; b < sb.n_bins; ++b) {
        const double lnk = std::log(sb.bin_centers[b]);
        const double dz = (lnk - ln_bump) / ts.bump_width;
        p[b] = base(sb.bin_centers[b]) + amp * std::exp(-0.5 * dz * dz);
    }
    return p;
}

// Stationary Gaussian draw with the given log-spectrum.
inline Field2D synthesize_truth(const Grid2D& grid, const SpectralBinning& sb,
                                std::span<const double> tau, RngKey key) {
    Fft2D fft(grid);
    XiLayout layout(grid);
    auto xi = gaussian_vector(key, grid.n_pixels());
    std::vector<double> bins(sb.n_bins);
    for (std::size_t b = 0; b < bins.size(); ++b) bins[b] = std::exp(0.5 * tau[b]);
    auto w = power_distribute(sb, bins);
    std::vector<std::complex<double>> h(xi.size());
    layout.to_harmonic(xi, h);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] *= w[i];
    std::vector<std::complex<double>> buf(h.size());
    fft.backward_complex(h, buf);
    Field2D out(grid);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = buf[i].real();
    return out;
}

// First floor(coverage * n^2) entries of a seeded uniform permutation.
inline std::vector<std::size_t> coverage_mask(const Grid2D& grid, double coverage, RngKey key) {
    if (!(coverage > 0.0) || coverage > 1.0)
        throw std::invalid_argument("coverage must lie in (0,1]");
    const std::size_t n2 = grid.n_pixels();
    const auto m = static_cast<std::size_t>(std::floor(coverage * static_cast<double>(n2)));
    if (m == 0) throw std::invalid_argument("coverage leaves no data points");
    std::vector<std::size_t> perm(n2);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::uint64_t ctr = 0;
    for (std::size_t i = n2 - 1; i > 0; --i) {
        auto j = static_cast<std::size_t>(uniform01(key, ctr++) * static_cast<double>(i + 1));
        j = std::min(j, i);
        std::swap(perm[i], perm[j]);
    }
    perm.resize(m);
    return perm;
}

// All generated pieces of one synthetic scenario plus the ready model.
struct Experiment {
    ExperimentConfig cfg;
    Grid2D grid;
    SpectralBinning binning;
    std::vector<double> tau_true;
    Field2D s_true;
    std::vector<std::size_t> mask;
    std::vector<double> data;
    GpModel model;
    Field2D reference;  // posterior mean under the true spectrum

    explicit Experiment(ExperimentConfig config)
        : cfg(resolve(std::move(config))),
          grid(cfg.n_side, cfg.pixel_size),
          binning(SpectralBinning::build(grid, cfg.n_bins)),
          tau_true(make_tau_true(binning, cfg)),
          s_true(synthesize_truth(grid, binning, tau_true,
                                  RngKey::root(cfg.seed).child(0xE1))),
          mask(coverage_mask(grid, cfg.coverage, RngKey::root(cfg.seed).child(0xE2))),
          data(make_data(s_true, mask, cfg)),
          model(grid, cfg.n_bins, mask, NoiseModel(cfg.sigma_n),
                SpectrumPrior{cfg.sigma_smooth, cfg.sigma_offset}, data),
          reference(wiener_filter(model, tau_true,
                                  CgOptions{cfg.cg_tol, cfg.cg_max_iter}).mean) {}

    std::vector<double> tau_init() const {
        double var = 1.0;
        if (!data.empty()) {
            double mean = 0.0;
            for (double d : data) mean += d;
            mean /= static_cast<double>(data.size());
            double acc = 0.0;
            for (double d : data) acc += (d - mean) * (d - mean);
            var = acc / static_cast<double>(data.size());
            if (!(var > 0.0)) var = 1.0;
        }
        return std::vector<double>(binning.n_bins, std::log(var));
    }

    RunConfig run_config() const {
        RunConfig rc;
        rc.outer_iterations = cfg.outer_iterations;
        rc.sample_pairs = cfg.sample_pairs;
        rc.cg = CgOptions{cfg.cg_tol, cfg.cg_max_iter};
        rc.spectrum_opt.max_iterations = cfg.inner_iterations;
        rc.seed = cfg.seed;
        rc.tau_init = tau_init();
        rc.schedule = cfg.schedule;
        rc.record_timing = cfg.record_timing;
        return rc;
    }

    RunResult run() const {
        const auto rc = run_config();
        if (cfg.mode == "deep") return run_deep(model, rc, reference);
        if (cfg.mode == "flat") return run_flat(model, rc, reference);
        if (cfg.mode == "alternating") return run_alternating(model, rc, reference);
        throw std::invalid_argument("unknown mode: " + cfg.mode);
    }

private:
    static ExperimentConfig resolve(ExperimentConfig c) {
        if (c.n_bins == 0) c.n_bins = static_cast<std::size_t>(c.n_side) / 2;
        return c;
    }
    static std::vector<double> make_tau_true(const SpectralBinning& sb,
                                             const ExperimentConfig& cfg) {
        auto p = truth_spectrum_values(sb, cfg.truth);
        std::vector<double> tau(p.size());
        for (std::size_t b = 0; b < p.size(); ++b) tau[b] = std::log(p[b]);
        return tau;
    }
    static std::vector<double> make_data(const Field2D& s, const std::vector<std::size_t>& mask,
                                         const ExperimentConfig& cfg) {
        auto noise = gaussian_vector(RngKey::root(cfg.seed).child(0xE3), mask.size());
        std::vector<double> d(mask.size());
        for (std::size_t j = 0; j < mask.size(); ++j)
            d[j] = s.values[mask[j]] + cfg.sigma_n * noise[j];
        return d;
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_ms(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace detail

inline void write_convergence_csv(const std::string& path,
                                  const std::vector<ConvergenceRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "iter,eps,wall_ms,mode\n";
    for (const auto& r : records)
        out << r.iter << ',' << detail::format_double(r.eps) << ','
            << detail::format_ms(r.wall_ms) << ',' << r.mode << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline nlohmann::json config_to_manifest(const ExperimentConfig& cfg) {
    return nlohmann::json{
        {"schema_version", 1},
        {"n_side", cfg.n_side},
        {"pixel_size", cfg.pixel_size},
        {"n_bins", cfg.n_bins},
        {"coverage", cfg.coverage},
        {"sigma_n", cfg.sigma_n},
        {"truth",
         {{"p0", cfg.truth.p0},
          {"knee_factor", cfg.truth.knee_factor},
          {"slope", cfg.truth.slope},
          {"bump_rel_amp", cfg.truth.bump_rel_amp},
          {"bump_logk_frac", cfg.truth.bump_logk_frac},
          {"bump_width", cfg.truth.bump_width}}},
        {"sigma_smooth", cfg.sigma_smooth},
        {"sigma_offset", cfg.sigma_offset},
        {"seed", cfg.seed},
        {"mode", cfg.mode},
        {"outer_iterations", cfg.outer_iterations},
        {"schedule", {cfg.schedule.first, cfg.schedule.second}},
        {"cg_tol", cfg.cg_tol},
        {"cg_max_iter", cfg.cg_max_iter},
        {"sample_pairs", cfg.sample_pairs},
        {"inner_iterations", cfg.inner_iterations},
        {"record_timing", cfg.record_timing}};
}

// Out_dir is intentionally not part of the manifest, so a rerun into a fresh
// directory reproduces every output byte for byte, manifest included.
inline ExperimentConfig config_from_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("schema_version").get<int>() != 1)
        throw std::runtime_error("unsupported manifest schema version");
    ExperimentConfig cfg;
    cfg.n_side = j.at("n_side").get<int>();
    cfg.pixel_size = j.at("pixel_size").get<double>();
    cfg.n_bins = j.at("n_bins").get<std::size_t>();
    cfg.coverage = j.at("coverage").get<double>();
    cfg.sigma_n = j.at("sigma_n").get<double>();
    const auto& t = j.at("truth");
    cfg.truth.p0 = t.at("p0").get<double>();
    cfg.truth.knee_factor = t.at("knee_factor").get<double>();
    cfg.truth.slope = t.at("slope").get<double>();
    cfg.truth.bump_rel_amp = t.at("bump_rel_amp").get<double>();
    cfg.truth.bump_logk_frac = t.at("bump_logk_frac").get<double>();
    cfg.truth.bump_width = t.at("bump_width").get<double>();
    cfg.sigma_smooth = j.at("sigma_smooth").get<double>();
    cfg.sigma_offset = j.at("sigma_offset").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.mode = j.at("mode").get<std::string>();
    cfg.outer_iterations = j.at("outer_iterations").get<int>();
    cfg.schedule = {j.at("schedule")[0].get<int>(), j.at("schedule")[1].get<int>()};
    cfg.cg_tol = j.at("cg_tol").get<double>();
    cfg.cg_max_iter = j.at("cg_max_iter").get<int>();
    cfg.sample_pairs = j.at("sample_pairs").get<int>();
    cfg.inner_iterations = j.at("inner_iterations").get<int>();
    cfg.record_timing = j.at("record_timing").get<bool>();
    return cfg;
}

struct ExperimentOutcome {
    double final_eps = 0.0;
    std::vector<ConvergenceRecord> records;
    std::vector<double> tau_final;
};

// Runs the configured scenario and writes truth, data, reference, convergence
// CSV, per-iteration spectrum snapshots, and the manifest into cfg.out_dir.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("run_experiment: out_dir is empty");
    Experiment ex(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto path = [&](const std::string& name) {
        return (fs::path(cfg.out_dir) / name).string();
    };

    write_field(path("s_true.fld"), ex.s_true);
    {
        std::vector<double> p(ex.tau_true.size());
        for (std::size_t b = 0; b < p.size(); ++b) p[b] = std::exp(ex.tau_true[b]);
        write_spectrum(path("p_true.fld"), ex.binning, p);
    }
    {
        std::vector<double> idx(ex.mask.size());
        for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = static_cast<double>(ex.mask[j]);
        write_data_vector(path("mask.fld"), ex.grid, idx);
    }
    write_data_vector(path("data.fld"), ex.grid, ex.data);
    write_field(path("m_wf.fld"), ex.reference);

    auto rr = ex.run();
    write_convergence_csv(path("run_" + ex.cfg.mode + ".csv"), rr.records);
    for (const auto& rec : rr.records)
        write_spectrum(path("spec_" + ex.cfg.mode + "_" + std::to_string(rec.iter) + ".fld"),
                       ex.binning, rec.spectrum);
    write_field(path("mean_" + ex.cfg.mode + ".fld"), rr.mean);

    {
        std::ofstream mout(path("manifest.json"), std::ios::trunc);
        mout << config_to_manifest(ex.cfg).dump(2) << '\n';
        if (!mout) throw std::runtime_error("manifest write failed");
    }

    ExperimentOutcome outcome;
    outcome.records = rr.records;
    outcome.final_eps = rr.records.empty() ? 0.0 : rr.records.back().eps;
    outcome.tau_final = rr.tau;
    return outcome;
}

}  // namespace flatprior
