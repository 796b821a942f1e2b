#pragma once

// Unitary 2D Fourier transform on a Grid2D, backed by FFTW. Plans are created
// with FFTW_ESTIMATE so planning never depends on array contents, which keeps
// runs bit-reproducible; plan creation/destruction is serialized because the
// FFTW planner is not thread-safe.

#include <complex>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

#include "flatprior/grid.hpp"

namespace flatprior {

class Fft2D {
public:
    explicit Fft2D(const Grid2D& grid) : grid_(grid) {
        const int n = grid_.n_side;
        std::vector<std::complex<double>> a(grid_.n_pixels()), b(grid_.n_pixels());
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_plan fwd = fftw_plan_dft_2d(
            n, n, reinterpret_cast<fftw_complex*>(a.data()),
            reinterpret_cast<fftw_complex*>(b.data()), FFTW_FORWARD,
            FFTW_ESTIMATE | FFTW_UNALIGNED);
        fftw_plan bwd = fftw_plan_dft_2d(
            n, n, reinterpret_cast<fftw_complex*>(a.data()),
            reinterpret_cast<fftw_complex*>(b.data()), FFTW_BACKWARD,
            FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (!fwd || !bwd) throw std::runtime_error("Fft2D: planning failed");
        fwd_ = std::shared_ptr<fftw_plan_s>(fwd, destroy_plan);
        bwd_ = std::shared_ptr<fftw_plan_s>(bwd, destroy_plan);
    }

    const Grid2D& grid() const { return grid_; }

    void forward_complex(std::span<const std::complex<double>> in,
                         std::span<std::complex<double>> out) const {
        execute(fwd_.get(), in, out);
    }

    void backward_complex(std::span<const std::complex<double>> in,
                          std::span<std::complex<double>> out) const {
        execute(bwd_.get(), in, out);
    }

    HarmonicField forward(const Field2D& f) const {
        if (!(f.grid == grid_)) throw std::invalid_argument("Fft2D::forward: grid mismatch");
        std::vector<std::complex<double>> in(f.values.begin(), f.values.end());
        HarmonicField h(grid_);
        forward_complex(in, h.values);
        return h;
    }

    // Adjoint of the unitary forward transform = inverse; imaginary parts are
    // dropped, which is exact for Hermitian input.
    Field2D adjoint(const HarmonicField& h) const {
        if (!(h.grid == grid_)) throw std::invalid_argument("Fft2D::adjoint: grid mismatch");
        std::vector<std::complex<double>> out(grid_.n_pixels());
        backward_complex(h.values, out);
        Field2D f(grid_);
        for (std::size_t i = 0; i < out.size(); ++i) f.values[i] = out[i].real();
        return f;
    }

private:
    static void destroy_plan(fftw_plan_s* p) {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(p);
    }

    static std::mutex& planner_mutex() {
        static std::mutex m;
        return m;
    }

    void execute(fftw_plan_s* plan, std::span<const std::complex<double>> in,
                 std::span<std::complex<double>> out) const {
        if (in.size() != grid_.n_pixels() || out.size() != grid_.n_pixels())
            throw std::invalid_argument("Fft2D: buffer size mismatch");
        if (in.data() == out.data()) {
            std::vector<std::complex<double>> tmp(in.begin(), in.end());
            execute(plan, tmp, out);
            return;
        }
        fftw_execute_dft(
            plan,
            reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data())),
            reinterpret_cast<fftw_complex*>(out.data()));
        const double scale = 1.0 / grid_.n_side;
        for (auto& v : out) v *= scale;
    }

    Grid2D grid_;
    std::shared_ptr<fftw_plan_s> fwd_;
    std::shared_ptr<fftw_plan_s> bwd_;
};

}  // namespace flatprior
