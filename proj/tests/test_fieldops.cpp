#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <vector>

#include "flatprior/fft.hpp"
#include "flatprior/field_io.hpp"
#include "flatprior/fieldops.hpp"
#include "flatprior/rng.hpp"

#include "support/oracles.hpp"

using namespace flatprior;

namespace {

// O(n^4) direct DFT with the library's unitary convention.
std::vector<std::complex<double>> direct_dft(const Grid2D& g, std::span<const double> f) {
    const int n = g.n_side;
    std::vector<std::complex<double>> out(g.n_pixels());
    const double scale = 1.0 / n;
    for (int kr = 0; kr < n; ++kr)
        for (int kc = 0; kc < n; ++kc) {
            std::complex<double> acc = 0.0;
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < n; ++c) {
                    const double ang = -2.0 * std::numbers::pi *
                                       (double(kr) * r + double(kc) * c) / n;
                    acc += f[std::size_t(r) * n + c] *
                           std::complex<double>(std::cos(ang), std::sin(ang));
                }
            out[std::size_t(kr) * n + kc] = acc * scale;
        }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void check_adjoint(const LinearOperator& op, RngKey key, double tol = 1e-10) {
    for (std::uint64_t t = 0; t < 20; ++t) {
        auto x = gaussian_vector(key.child(2 * t), op.domain_dim());
        auto y = gaussian_vector(key.child(2 * t + 1), op.codomain_dim());
        const double lhs = dot(op.apply(x), y);
        const double rhs = dot(x, op.adjoint_apply(y));
        const double scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
        REQUIRE(std::abs(lhs - rhs) <= tol * scale);
    }
}

}  // namespace

TEST_CASE("fft: constant field concentrates in the zero mode") {
    Grid2D g(8, 1.0);
    Fft2D fft(g);
    Field2D f(g, std::vector<double>(g.n_pixels(), 0.7));
    auto h = fft.forward(f);
    CHECK(std::abs(h.values[0] - 0.7 * 8.0) <= 1e-12);  // c * n_side under unitary scaling
    for (std::size_t i = 1; i < h.values.size(); ++i) CHECK(std::abs(h.values[i]) <= 1e-12);
}

TEST_CASE("fft: delta field spreads flat") {
    Grid2D g(8, 1.0);
    Fft2D fft(g);
    Field2D f(g);
    f.values[3] = 1.0;
    auto h = fft.forward(f);
    for (const auto& v : h.values) CHECK(std::abs(std::abs(v) - 1.0 / 8.0) <= 1e-12);
}

TEST_CASE("fft matches direct DFT oracle on 8x8") {
    Grid2D g(8, 1.0);
    Fft2D fft(g);
    Field2D f(g, gaussian_vector(RngKey::root(5), g.n_pixels()));
    auto h = fft.forward(f);
    auto want = direct_dft(g, f.values);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(std::abs(h.values[i] - want[i]) <= 1e-12);
}

TEST_CASE("fft round trip and unitarity") {
    Grid2D g(16, 0.5);
    Fft2D fft(g);
    Field2D f(g, gaussian_vector(RngKey::root(6), g.n_pixels()));
    auto back = fft.adjoint(fft.forward(f));
    CHECK(oracle::max_abs_diff(back.values, f.values) <= 1e-12);
    // Parseval
    auto h = fft.forward(f);
    double pos = 0.0, har = 0.0;
    for (double v : f.values) pos += v * v;
    for (const auto& v : h.values) har += std::norm(v);
    CHECK(std::abs(pos - har) <= 1e-10 * pos);
}

TEST_CASE("fft preserves hermitian symmetry") {
    Grid2D g(8, 1.0);
    Fft2D fft(g);
    Field2D f(g, gaussian_vector(RngKey::root(7), g.n_pixels()));
    auto h = fft.forward(f);
    CHECK(max_hermitian_asymmetry(h) < 1e-12);
}

TEST_CASE("k grid geometry") {
    Grid2D g(8, 1.0);
    auto sb = SpectralBinning::build(g, 4);
    CHECK(sb.k_abs[0] == 0.0);
    CHECK(sb.bin_of_pixel[0] == 0);
    // Nyquist corner (4,4) on 8x8 with unit pixels: |k| = sqrt2 * 0.5
    const std::size_t corner = 4 * 8 + 4;
    CHECK(std::abs(sb.k_abs[corner] - std::numbers::sqrt2 * 0.5) <= 1e-15);
    std::size_t total = 0;
    for (auto m : sb.multiplicities) total += m;
    CHECK(total == 64);
    CHECK(sb.multiplicities[0] == 1);

    // axis frequencies follow the standard FFT layout in cycles per length
    CHECK(axis_frequency(0, 8, 1.0) == 0.0);
    CHECK(std::abs(axis_frequency(1, 8, 1.0) - 0.125) <= 1e-15);
    CHECK(std::abs(axis_frequency(7, 8, 1.0) + 0.125) <= 1e-15);
    CHECK(std::abs(axis_frequency(4, 8, 1.0)) == 0.5);
}

TEST_CASE("binning is geometric and uniform in ln k") {
    Grid2D g(64, 1.0);
    auto sb = SpectralBinning::build(g);
    CHECK(sb.n_bins == 32);
    const double h = log_bin_spacing(sb);
    for (std::size_t b = 2; b + 1 < sb.n_bins; ++b)
        CHECK(std::abs(std::log(sb.bin_centers[b + 1] / sb.bin_centers[b]) - h) <= 1e-12);
    CHECK(std::abs(sb.bin_centers[1] - 1.0 / 64.0) <= 1e-15);
    CHECK(std::abs(sb.bin_centers[sb.n_bins - 1] - std::numbers::sqrt2 / 2.0) <= 1e-12);
    std::size_t total = 0;
    for (auto m : sb.multiplicities) total += m;
    CHECK(total == 64 * 64);
}

TEST_CASE("power distribute and bin sums") {
    Grid2D g(8, 1.0);
    auto sb = SpectralBinning::build(g, 4);

    auto flat = power_distribute(sb, std::vector<double>(4, 1.0));
    for (double w : flat) CHECK(w == 1.0);

    for (std::size_t hot = 0; hot < 4; ++hot) {
        std::vector<double> one_hot(4, 0.0);
        one_hot[hot] = 1.0;
        auto w = power_distribute(sb, one_hot);
        for (std::size_t i = 0; i < w.size(); ++i)
            CHECK(w[i] == (sb.bin_of_pixel[i] == static_cast<int>(hot) ? 1.0 : 0.0));
    }

    auto mult = bin_sums(sb, std::vector<double>(g.n_pixels(), 1.0));
    for (std::size_t b = 0; b < 4; ++b)
        CHECK(mult[b] == static_cast<double>(sb.multiplicities[b]));

    check_adjoint(power_distributor(sb), RngKey::root(8));
}

TEST_CASE("covariance operator from a spectrum") {
    Grid2D g(8, 1.0);
    auto sb = SpectralBinning::build(g, 4);
    Fft2D fft(g);

    auto id_spec = covariance_from_spectrum(sb, fft, std::vector<double>(4, 1.0));
    auto x = gaussian_vector(RngKey::root(9), g.n_pixels());
    CHECK(oracle::max_abs_diff(id_spec.apply(x), x) <= 1e-12);

    std::vector<double> spec{2.0, 0.5, 1.5, 3.0};
    auto S = covariance_from_spectrum(sb, fft, spec);
    check_adjoint(S, RngKey::root(10));

    // dense S is symmetric with eigenvalues equal to the distributed spectrum
    auto dense = oracle::densify([&S](std::vector<double> v) { return S.apply(v); },
                                 g.n_pixels(), g.n_pixels());
    CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense);
    auto weights = power_distribute(sb, spec);
    std::sort(weights.begin(), weights.end());
    for (std::size_t i = 0; i < weights.size(); ++i)
        CHECK(std::abs(eig.eigenvalues()(static_cast<Eigen::Index>(i)) - weights[i]) <= 1e-10);

    CHECK_THROWS_AS(covariance_from_spectrum(sb, fft, std::vector<double>{1.0, -1.0, 1.0, 1.0}),
                    std::invalid_argument);
}

TEST_CASE("sample covariance of synthesized fields matches the spectrum") {
    Grid2D g(8, 1.0);
    auto sb = SpectralBinning::build(g, 4);
    Fft2D fft(g);
    XiLayout layout(g);
    std::vector<double> spec{2.0, 0.5, 1.5, 3.0};
    auto sqrtw = power_distribute(sb, spec);
    for (double& w : sqrtw) w = std::sqrt(w);

    // bin-averaged empirical power of 1e5 draws s = F^dag diag(sqrt p) U xi
    const std::size_t n_draw = 100000;
    std::vector<double> power(g.n_pixels(), 0.0);
    std::vector<std::complex<double>> h(g.n_pixels()), hw(g.n_pixels());
    for (std::size_t t = 0; t < n_draw; ++t) {
        auto xi = gaussian_vector(RngKey::root(100).child(t), g.n_pixels());
        layout.to_harmonic(xi, h);
        for (std::size_t i = 0; i < h.size(); ++i) hw[i] = sqrtw[i] * h[i];
        for (std::size_t i = 0; i < h.size(); ++i) power[i] += std::norm(hw[i]);
    }
    for (double& p : power) p /= static_cast<double>(n_draw);
    auto sums = bin_sums(sb, power);
    for (std::size_t b = 0; b < 4; ++b) {
        const double mean_power = sums[b] / static_cast<double>(sb.multiplicities[b]);
        // each |h_k|^2 is chi^2-like; relative SE of the bin mean
        const double se = spec[b] * std::sqrt(2.0 / double(n_draw * sb.multiplicities[b]));
        CHECK(std::abs(mean_power - spec[b]) <= 5.0 * se);
    }
}

TEST_CASE("response gathers and scatters") {
    Grid2D g(8, 1.0);
    Response full(g, [&] {
        std::vector<std::size_t> all(g.n_pixels());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }());
    auto x = gaussian_vector(RngKey::root(12), g.n_pixels());
    std::vector<double> d(g.n_pixels());
    full.apply(x, d);
    CHECK(oracle::max_abs_diff(d, x) == 0.0);

    Response single(g, {5});
    std::vector<double> one(1);
    single.apply(x, one);
    CHECK(one[0] == x[5]);

    Response some(g, {3, 17, 40});
    // R R^T = identity on data space
    auto op = some.as_operator();
    auto dense = oracle::densify([&op](std::vector<double> v) { return op.apply(v); },
                                 g.n_pixels(), 3);
    Eigen::MatrixXd rrt = dense * dense.transpose();
    CHECK((rrt - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
    check_adjoint(op, RngKey::root(13));

    CHECK_THROWS_AS(Response(g, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(Response(g, {64 * 64}), std::invalid_argument);
}

TEST_CASE("xi layout is orthogonal and hermitian") {
    Grid2D g(8, 1.0);
    XiLayout layout(g);
    auto xi = gaussian_vector(RngKey::root(14), g.n_pixels());
    std::vector<std::complex<double>> h(g.n_pixels());
    layout.to_harmonic(xi, h);
    CHECK(max_hermitian_asymmetry(HarmonicField(g, h)) == 0.0);
    // norm preserved
    double nx = 0.0, nh = 0.0;
    for (double v : xi) nx += v * v;
    for (const auto& v : h) nh += std::norm(v);
    CHECK(std::abs(nx - nh) <= 1e-12 * nx);
    // round trip: paired entries pass through two sqrt(2) rotations, so allow
    // a few ulps
    std::vector<double> back(g.n_pixels());
    layout.from_harmonic(h, back);
    CHECK(oracle::max_abs_diff(back, xi) < 1e-14);
}

TEST_CASE("smoothness prior basics") {
    Grid2D g(32, 1.0);
    auto sb = SpectralBinning::build(g, 16);
    LogkSmoothness sm(sb, 1.0, 2.0);

    auto tau0 = sm.tau_from_zeta(std::vector<double>(16, 0.0));
    for (double t : tau0) CHECK(t == 0.0);

    // linearity
    auto z = gaussian_vector(RngKey::root(15), 16);
    auto t1 = sm.tau_from_zeta(z);
    auto z2 = z;
    for (double& v : z2) v *= 3.0;
    auto t2 = sm.tau_from_zeta(z2);
    for (std::size_t i = 0; i < t1.size(); ++i)
        CHECK(std::abs(t2[i] - 3.0 * t1[i]) <= 1e-12 * std::max(1.0, std::abs(t1[i])));

    // one-hot in the l = 0 axis mode: constant tau with value sigma_offset/sqrt(M)
    std::vector<double> one(16, 0.0);
    one[1] = 1.0;
    auto tc = sm.tau_from_zeta(one);
    CHECK(tc[0] == 0.0);
    const double want = 2.0 / std::sqrt(15.0);
    for (std::size_t b = 1; b < 16; ++b) CHECK(std::abs(tc[b] - want) <= 1e-14);

    // bin-0 one-hot: only the offset moves, by sigma_offset
    std::vector<double> e0(16, 0.0);
    e0[0] = 1.0;
    auto t0 = sm.tau_from_zeta(e0);
    CHECK(t0[0] == 2.0);
    for (std::size_t b = 1; b < 16; ++b) CHECK(t0[b] == 0.0);
}

TEST_CASE("smoothness map is exactly invertible") {
    Grid2D g(32, 1.0);
    auto sb = SpectralBinning::build(g, 16);
    LogkSmoothness sm(sb, 0.7, 3.0);
    auto z = gaussian_vector(RngKey::root(16), 16);
    auto back = sm.zeta_from_tau(sm.tau_from_zeta(z));
    CHECK(oracle::max_abs_diff(back, z) <= 1e-12);
    auto tau = gaussian_vector(RngKey::root(17), 16);
    auto tback = sm.tau_from_zeta(sm.zeta_from_tau(tau));
    CHECK(oracle::max_abs_diff(tback, tau) <= 1e-12);
}

TEST_CASE("smoothness quadratic form equals the white norm of zeta") {
    Grid2D g(32, 1.0);
    auto sb = SpectralBinning::build(g, 16);
    LogkSmoothness sm(sb, 0.9, 1.7);
    auto z = gaussian_vector(RngKey::root(18), 16);
    auto tau = sm.tau_from_zeta(z);
    double half_z = 0.0;
    for (double v : z) half_z += v * v;
    half_z *= 0.5;
    CHECK(std::abs(sm.quadratic_form(tau) - half_z) <= 1e-10 * std::max(1.0, half_z));
}

TEST_CASE("smoothness precision matches a dense basis oracle on B = 16") {
    Grid2D g(32, 1.0);
    auto sb = SpectralBinning::build(g, 16);
    const double sigma_smooth = 0.8, sigma_offset = 2.5;
    LogkSmoothness sm(sb, sigma_smooth, sigma_offset);
    const std::size_t m = 15;
    const double h = log_bin_spacing(sb);

    // independent dense construction of L on the axis part
    Eigen::MatrixXd basis(m, m);
    std::vector<double> amp(m);
    std::size_t col = 0;
    for (std::size_t row = 0; row < m; ++row) basis(row, 0) = 1.0 / std::sqrt(double(m));
    amp[col++] = sigma_offset;
    for (std::size_t j = 1; 2 * j < m; ++j) {
        const double l = 2.0 * std::numbers::pi * double(j) / (double(m) * h);
        for (std::size_t row = 0; row < m; ++row) {
            const double ang = 2.0 * std::numbers::pi * double(j) * double(row) / double(m);
            basis(row, col) = std::sqrt(2.0 / double(m)) * std::cos(ang);
            basis(row, col + 1) = std::sqrt(2.0 / double(m)) * std::sin(ang);
        }
        amp[col] = sigma_smooth / (l * l);
        amp[col + 1] = sigma_smooth / (l * l);
        col += 2;
    }
    if (m % 2 == 0) {
        const double l = 2.0 * std::numbers::pi * double(m / 2) / (double(m) * h);
        for (std::size_t row = 0; row < m; ++row)
            basis(row, col) = (row % 2 == 0 ? 1.0 : -1.0) / std::sqrt(double(m));
        amp[col++] = sigma_smooth / (l * l);
    }
    REQUIRE(col == m);
    CHECK((basis * basis.transpose() - Eigen::MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff() <=
          1e-12);
    Eigen::MatrixXd L_axis = basis;
    for (std::size_t c = 0; c < m; ++c) L_axis.col(c) *= amp[c];
    Eigen::MatrixXd Tinv_axis = (L_axis * L_axis.transpose()).inverse();

    auto tau = gaussian_vector(RngKey::root(19), 16);
    auto got = sm.precision_apply(tau);
    Eigen::VectorXd tau_axis(m);
    for (std::size_t i = 0; i < m; ++i) tau_axis(i) = tau[1 + i];
    Eigen::VectorXd want = Tinv_axis * tau_axis;
    CHECK(std::abs(got[0] - tau[0] / (sigma_offset * sigma_offset)) <= 1e-12);
    for (std::size_t i = 0; i < m; ++i)
        CHECK(std::abs(got[1 + i] - want(i)) <= 1e-8 * std::max(1.0, std::abs(want(i))));

    // a linear-in-ln-k tau costs only through the offset and the periodic wrap,
    // so its quadratic form is dominated by the wrap: compare against the
    // dense oracle rather than asserting smallness
    std::vector<double> lin(16);
    lin[0] = 0.0;
    for (std::size_t b = 1; b < 16; ++b) lin[b] = 0.1 * static_cast<double>(b - 1);
    Eigen::VectorXd lin_axis(m);
    for (std::size_t i = 0; i < m; ++i) lin_axis(i) = lin[1 + i];
    const double dense_q = 0.5 * lin_axis.dot(Tinv_axis * lin_axis);
    CHECK(std::abs(sm.quadratic_form(lin) - dense_q) <= 1e-8 * std::max(1.0, dense_q));
}

TEST_CASE("smoothness rejects non-uniform spacing") {
    Grid2D g(32, 1.0);
    auto sb = SpectralBinning::build(g, 16);
    sb.bin_centers[5] *= 1.01;
    CHECK_THROWS_AS(LogkSmoothness(sb, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("fld1 round trips") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "flatprior_io_test";
    fs::create_directories(dir);

    Grid2D g(8, 0.5);
    Field2D f(g, gaussian_vector(RngKey::root(20), g.n_pixels()));
    const auto fpath = (dir / "field.fld").string();
    write_field(fpath, f);
    auto f2 = read_field(fpath);
    CHECK(f2.grid == g);
    CHECK(f2.values == f.values);  // bitwise

    auto sb = SpectralBinning::build(g, 4);
    std::vector<double> spec{1.0, 0.25, 0.5, 2.0};
    const auto spath = (dir / "spec.fld").string();
    write_spectrum(spath, sb, spec);
    auto s2 = read_spectrum(spath);
    CHECK(s2.values == spec);
    CHECK(s2.bin_centers == sb.bin_centers);

    auto d = gaussian_vector(RngKey::root(21), 7);
    const auto dpath = (dir / "data.fld").string();
    write_data_vector(dpath, g, d);
    CHECK(read_data_vector(dpath) == d);

    // rewriting the same content is byte-identical
    const auto bytes1 = oracle::read_file_bytes(fpath);
    write_field(fpath, f);
    CHECK(oracle::read_file_bytes(fpath) == bytes1);

    // magic line is enforced
    {
        std::ofstream bad((dir / "bad.fld").string(), std::ios::binary);
        bad << "FLDX\n{}\n";
    }
    CHECK_THROWS(read_field((dir / "bad.fld").string()));
    fs::remove_all(dir);
}
