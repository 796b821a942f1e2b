#pragma once

// Spectral bookkeeping on the conjugate grid: isotropic power-spectrum bins,
// the distribution operator between bin values and pixel weights, diagonal
// covariances, masking responses, the real relabeling of Hermitian harmonic
// fields, and the smoothness prior on log-spectra.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flatprior/fft.hpp"
#include "flatprior/grid.hpp"
#include "flatprior/linear_operator.hpp"

namespace flatprior {

// Frequencies in cycles per length unit, fftfreq layout per axis.
inline double axis_frequency(int index, int n_side, double pixel_size) {
    const int signed_idx = index <= n_side / 2 ? index : index - n_side;
    return signed_idx / (n_side * pixel_size);
}

// Isotropic binning of the conjugate grid. Bin 0 holds exactly the zero mode;
// bins 1..B-1 have centers geometric between the fundamental and the Nyquist
// corner, and every nonzero pixel joins the center nearest in ln|k|.
struct SpectralBinning {
    Grid2D grid;
    std::size_t n_bins = 0;
    std::vector<double> bin_centers;          // [0] = 0
    std::vector<std::size_t> multiplicities;  // pixels per bin, sums to n_side^2
    std::vector<int> bin_of_pixel;
    std::vector<double> k_abs;

    static SpectralBinning build(const Grid2D& grid, std::size_t n_bins = 0) {
        if (n_bins == 0) n_bins = static_cast<std::size_t>(grid.n_side) / 2;
        if (n_bins < 4) throw std::invalid_argument("SpectralBinning: need at least 4 bins");

        SpectralBinning sb;
        sb.grid = grid;
        sb.n_bins = n_bins;

        const int n = grid.n_side;
        const double k_fund = 1.0 / (n * grid.pixel_size);
        const double k_corner = std::numbers::sqrt2 / (2.0 * grid.pixel_size);
        const double log_step = std::log(k_corner / k_fund) / static_cast<double>(n_bins - 2);

        sb.bin_centers.resize(n_bins);
        sb.bin_centers[0] = 0.0;
        for (std::size_t b = 1; b < n_bins; ++b)
            sb.bin_centers[b] = k_fund * std::exp(log_step * static_cast<double>(b - 1));

        sb.multiplicities.assign(n_bins, 0);
        sb.bin_of_pixel.resize(grid.n_pixels());
        sb.k_abs.resize(grid.n_pixels());
        for (int r = 0; r < n; ++r) {
            const double ky = axis_frequency(r, n, grid.pixel_size);
            for (int c = 0; c < n; ++c) {
                const double kx = axis_frequency(c, n, grid.pixel_size);
                const std::size_t i = static_cast<std::size_t>(r) * n + c;
                const double k = std::hypot(kx, ky);
                sb.k_abs[i] = k;
                int bin = 0;
                if (k > 0.0) {
                    const double pos = std::log(k / k_fund) / log_step;
                    const long j = std::lround(pos);
                    bin = 1 + static_cast<int>(std::clamp(j, 0l, static_cast<long>(n_bins) - 2));
                }
                sb.bin_of_pixel[i] = bin;
                ++sb.multiplicities[static_cast<std::size_t>(bin)];
            }
        }
        return sb;
    }
};

inline double log_bin_spacing(const SpectralBinning& sb) {
    return std::log(sb.bin_centers[2] / sb.bin_centers[1]);
}

// Bin values spread to pixel weights.
inline std::vector<double> power_distribute(const SpectralBinning& sb,
                                            std::span<const double> bin_values) {
    if (bin_values.size() != sb.n_bins)
        throw std::invalid_argument("power_distribute: wrong bin count");
    std::vector<double> w(sb.bin_of_pixel.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = bin_values[static_cast<std::size_t>(sb.bin_of_pixel[i])];
    return w;
}

// Adjoint of power_distribute: pixel weights summed per bin.
inline std::vector<double> bin_sums(const SpectralBinning& sb,
                                    std::span<const double> pixel_values) {
    if (pixel_values.size() != sb.bin_of_pixel.size())
        throw std::invalid_argument("bin_sums: wrong pixel count");
    std::vector<double> s(sb.n_bins, 0.0);
    for (std::size_t i = 0; i < pixel_values.size(); ++i)
        s[static_cast<std::size_t>(sb.bin_of_pixel[i])] += pixel_values[i];
    return s;
}

inline LinearOperator power_distributor(const SpectralBinning& sb) {
    auto fwd = [&sb](std::span<const double> in, std::span<double> out) {
        auto w = power_distribute(sb, in);
        std::copy(w.begin(), w.end(), out.begin());
    };
    auto adj = [&sb](std::span<const double> in, std::span<double> out) {
        auto s = bin_sums(sb, in);
        std::copy(s.begin(), s.end(), out.begin());
    };
    return LinearOperator(sb.n_bins, sb.bin_of_pixel.size(), fwd, adj);
}

// Stationary covariance S = F^dagger diag(distributed spectrum) F as a
// pixel-space operator. Symmetric, so the adjoint is the same map.
inline LinearOperator covariance_from_spectrum(const SpectralBinning& sb, const Fft2D& fft,
                                               std::vector<double> spectrum) {
    if (spectrum.size() != sb.n_bins)
        throw std::invalid_argument("covariance_from_spectrum: wrong bin count");
    for (double p : spectrum)
        if (!(p > 0.0))
            throw std::invalid_argument("covariance_from_spectrum: spectrum must be positive");
    auto weights = power_distribute(sb, spectrum);
    const std::size_t n = sb.bin_of_pixel.size();
    auto apply = [&sb, &fft, weights](std::span<const double> in, std::span<double> out) {
        std::vector<std::complex<double>> buf(in.begin(), in.end());
        std::vector<std::complex<double>> hat(buf.size());
        fft.forward_complex(buf, hat);
        for (std::size_t i = 0; i < hat.size(); ++i) hat[i] *= weights[i];
        fft.backward_complex(hat, buf);
        for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i].real();
    };
    return LinearOperator(n, n, apply, apply);
}

// Pixel-gather response: data_j = field[mask[j]]. Indices must be distinct and
// in range; the adjoint scatters back, so R R^T = identity on data space.
class Response {
public:
    Response(const Grid2D& grid, std::vector<std::size_t> mask)
        : grid_(grid), mask_(std::move(mask)) {
        std::vector<bool> seen(grid_.n_pixels(), false);
        for (std::size_t idx : mask_) {
            if (idx >= grid_.n_pixels())
                throw std::invalid_argument("Response: mask index out of range");
            if (seen[idx])
                throw std::invalid_argument("Response: duplicate mask index");
            seen[idx] = true;
        }
    }

    const Grid2D& grid() const { return grid_; }
    const std::vector<std::size_t>& mask() const { return mask_; }
    std::size_t n_data() const { return mask_.size(); }

    void apply(std::span<const double> field, std::span<double> data) const {
        for (std::size_t j = 0; j < mask_.size(); ++j) data[j] = field[mask_[j]];
    }

    void adjoint_apply(std::span<const double> data, std::span<double> field) const {
        std::fill(field.begin(), field.end(), 0.0);
        for (std::size_t j = 0; j < mask_.size(); ++j) field[mask_[j]] = data[j];
    }

    LinearOperator as_operator() const {
        const std::size_t nf = grid_.n_pixels();
        const std::size_t nd = mask_.size();
        auto self = *this;
        return LinearOperator(
            nf, nd,
            [self](std::span<const double> in, std::span<double> out) { self.apply(in, out); },
            [self](std::span<const double> in, std::span<double> out) {
                self.adjoint_apply(in, out);
            });
    }

private:
    Grid2D grid_;
    std::vector<std::size_t> mask_;
};

// Unitary relabeling between real coefficient vectors and Hermitian harmonic
// fields. Self-conjugate pixels map directly; each conjugate pair stores
// (re, im)/sqrt2 in its two slots. Composing the inverse FFT with this map
// gives a real orthogonal matrix.
class XiLayout {
public:
    explicit XiLayout(const Grid2D& grid) : grid_(grid), partner_(grid.n_pixels()) {
        const int n = grid.n_side;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * n + c;
                partner_[i] = static_cast<std::size_t>((n - r) % n) * n + (n - c) % n;
            }
    }

    const Grid2D& grid() const { return grid_; }

    void to_harmonic(std::span<const double> xi, std::span<std::complex<double>> h) const {
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        for (std::size_t i = 0; i < xi.size(); ++i) {
            const std::size_t j = partner_[i];
            if (j == i) {
                h[i] = xi[i];
            } else if (i < j) {
                h[i] = std::complex<double>(xi[i], xi[j]) * inv_sqrt2;
                h[j] = std::conj(h[i]);
            }
        }
    }

    void from_harmonic(std::span<const std::complex<double>> h, std::span<double> xi) const {
        constexpr double sqrt2 = 1.41421356237309504880;
        for (std::size_t i = 0; i < xi.size(); ++i) {
            const std::size_t j = partner_[i];
            if (j == i) {
                xi[i] = h[i].real();
            } else if (i < j) {
                xi[i] = sqrt2 * h[i].real();
                xi[j] = sqrt2 * h[i].imag();
            }
        }
    }

private:
    Grid2D grid_;
    std::vector<std::size_t> partner_;
};

// Gaussian-process prior on log spectra. The spectrum offset (bin 0) and the
// constant mode along the ln k axis are given a finite amplitude
// sigma_offset; every oscillating mode of (angular) frequency l gets
// sigma_smooth / l^2. That makes the map zeta -> tau square and exactly
// invertible, and the induced precision T^{-1} penalizes curvature in ln k.
class LogkSmoothness {
public:
    LogkSmoothness(const SpectralBinning& sb, double sigma_smooth, double sigma_offset)
        : n_bins_(sb.n_bins), axis_(sb.n_bins - 1) {
        if (!(sigma_smooth > 0.0) || !(sigma_offset > 0.0))
            throw std::invalid_argument("LogkSmoothness: amplitudes must be positive");
        const double h = log_bin_spacing(sb);
        for (std::size_t b = 2; b + 1 < sb.n_bins; ++b) {
            const double step = std::log(sb.bin_centers[b + 1] / sb.bin_centers[b]);
            if (std::abs(step - h) > 1e-9 * std::abs(h))
                throw std::invalid_argument("LogkSmoothness: bin centers not uniform in ln k");
        }

        // Real orthogonal harmonic basis on the periodic ln k axis, columns:
        // constant, then cos/sin pairs, then the alternating Nyquist column.
        const std::size_t m = axis_;
        basis_.assign(m * m, 0.0);
        mode_amplitude_.assign(n_bins_, 0.0);
        mode_amplitude_[0] = sigma_offset;  // spectrum offset bin
        const double two_pi = 2.0 * std::numbers::pi;
        std::size_t col = 0;
        auto set = [&](std::size_t row, std::size_t c, double v) { basis_[row * m + c] = v; };
        for (std::size_t row = 0; row < m; ++row) set(row, col, 1.0 / std::sqrt(double(m)));
        axis_frequency_.assign(m, 0.0);
        mode_amplitude_[1 + col] = sigma_offset;  // constant mode along the axis
        ++col;
        const double norm = std::sqrt(2.0 / double(m));
        for (std::size_t j = 1; 2 * j < m; ++j) {
            const double l = two_pi * double(j) / (double(m) * h);
            for (std::size_t row = 0; row < m; ++row) {
                const double ang = two_pi * double(j) * double(row) / double(m);
                set(row, col, norm * std::cos(ang));
                set(row, col + 1, norm * std::sin(ang));
            }
            axis_frequency_[col] = l;
            axis_frequency_[col + 1] = l;
            mode_amplitude_[1 + col] = sigma_smooth / (l * l);
            mode_amplitude_[1 + col + 1] = sigma_smooth / (l * l);
            col += 2;
        }
        if (m % 2 == 0) {
            const double l = two_pi * double(m / 2) / (double(m) * h);
            for (std::size_t row = 0; row < m; ++row)
                set(row, col, (row % 2 == 0 ? 1.0 : -1.0) / std::sqrt(double(m)));
            axis_frequency_[col] = l;
            mode_amplitude_[1 + col] = sigma_smooth / (l * l);
            ++col;
        }
        if (col != m) throw std::logic_error("LogkSmoothness: basis column count off");
    }

    std::size_t n_bins() const { return n_bins_; }
    const std::vector<double>& mode_amplitudes() const { return mode_amplitude_; }

    // tau = L zeta, L = blockdiag(sigma_offset, W diag(a)).
    std::vector<double> tau_from_zeta(std::span<const double> zeta) const {
        check_size(zeta.size(), "tau_from_zeta");
        std::vector<double> tau(n_bins_);
        tau[0] = mode_amplitude_[0] * zeta[0];
        for (std::size_t row = 0; row < axis_; ++row) {
            double acc = 0.0;
            for (std::size_t c = 0; c < axis_; ++c)
                acc += basis_[row * axis_ + c] * mode_amplitude_[1 + c] * zeta[1 + c];
            tau[1 + row] = acc;
        }
        return tau;
    }

    std::vector<double> zeta_from_tau(std::span<const double> tau) const {
        check_size(tau.size(), "zeta_from_tau");
        std::vector<double> zeta(n_bins_);
        zeta[0] = tau[0] / mode_amplitude_[0];
        for (std::size_t c = 0; c < axis_; ++c) {
            double acc = 0.0;
            for (std::size_t row = 0; row < axis_; ++row)
                acc += basis_[row * axis_ + c] * tau[1 + row];
            zeta[1 + c] = acc / mode_amplitude_[1 + c];
        }
        return zeta;
    }

    // L^T x, needed for gradients through tau(zeta).
    std::vector<double> tau_adjoint(std::span<const double> x) const {
        check_size(x.size(), "tau_adjoint");
        std::vector<double> out(n_bins_);
        out[0] = mode_amplitude_[0] * x[0];
        for (std::size_t c = 0; c < axis_; ++c) {
            double acc = 0.0;
            for (std::size_t row = 0; row < axis_; ++row)
                acc += basis_[row * axis_ + c] * x[1 + row];
            out[1 + c] = mode_amplitude_[1 + c] * acc;
        }
        return out;
    }

    // T^{-1} tau with T = L L^T.
    std::vector<double> precision_apply(std::span<const double> tau) const {
        check_size(tau.size(), "precision_apply");
        std::vector<double> out(n_bins_);
        out[0] = tau[0] / (mode_amplitude_[0] * mode_amplitude_[0]);
        std::vector<double> coeff(axis_);
        for (std::size_t c = 0; c < axis_; ++c) {
            double acc = 0.0;
            for (std::size_t row = 0; row < axis_; ++row)
                acc += basis_[row * axis_ + c] * tau[1 + row];
            coeff[c] = acc / (mode_amplitude_[1 + c] * mode_amplitude_[1 + c]);
        }
        for (std::size_t row = 0; row < axis_; ++row) {
            double acc = 0.0;
            for (std::size_t c = 0; c < axis_; ++c) acc += basis_[row * axis_ + c] * coeff[c];
            out[1 + row] = acc;
        }
        return out;
    }

    double quadratic_form(std::span<const double> tau) const {
        auto t = precision_apply(tau);
        double q = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) q += tau[i] * t[i];
        return 0.5 * q;
    }

private:
    void check_size(std::size_t got, const char* where) const {
        if (got != n_bins_)
            throw std::invalid_argument(std::string(where) + ": wrong length");
    }

    std::size_t n_bins_;
    std::size_t axis_;                   // bins along the ln k axis (= n_bins - 1)
    std::vector<double> basis_;          // axis_ x axis_, orthogonal
    std::vector<double> axis_frequency_;
    std::vector<double> mode_amplitude_; // length n_bins_
};

}  // namespace flatprior
