#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace flatprior {

// Square periodic pixel grid. Side length must be even so the Nyquist rows
// pair up cleanly under conjugation.
struct Grid2D {
    int n_side = 0;
    double pixel_size = 1.0;

    Grid2D() = default;
    Grid2D(int n, double px) : n_side(n), pixel_size(px) {
        if (n_side < 4 || n_side % 2 != 0)
            throw std::invalid_argument("Grid2D: n_side must be even and >= 4");
        if (!(pixel_size > 0.0))
            throw std::invalid_argument("Grid2D: pixel_size must be positive");
    }

    std::size_t n_pixels() const { return static_cast<std::size_t>(n_side) * n_side; }
    bool operator==(const Grid2D& other) const {
        return n_side == other.n_side && pixel_size == other.pixel_size;
    }
};

// Real scalar field, row-major.
struct Field2D {
    Grid2D grid;
    std::vector<double> values;

    Field2D() = default;
    explicit Field2D(const Grid2D& g) : grid(g), values(g.n_pixels(), 0.0) {}
    Field2D(const Grid2D& g, std::vector<double> v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.n_pixels())
            throw std::invalid_argument("Field2D: value count does not match grid");
    }

    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * grid.n_side + col]; }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * grid.n_side + col]; }
};

// Complex field on the conjugate grid, same row-major layout.
struct HarmonicField {
    Grid2D grid;
    std::vector<std::complex<double>> values;

    HarmonicField() = default;
    explicit HarmonicField(const Grid2D& g) : grid(g), values(g.n_pixels(), {0.0, 0.0}) {}
    HarmonicField(const Grid2D& g, std::vector<std::complex<double>> v)
        : grid(g), values(std::move(v)) {
        if (values.size() != grid.n_pixels())
            throw std::invalid_argument("HarmonicField: value count does not match grid");
    }
};

// Largest |h[k] - conj(h[-k])| over the grid; zero for a field that is the
// transform of a real one.
inline double max_hermitian_asymmetry(const HarmonicField& h) {
    const int n = h.grid.n_side;
    double worst = 0.0;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * n + c;
            const std::size_t j = static_cast<std::size_t>((n - r) % n) * n + (n - c) % n;
            const auto diff = h.values[i] - std::conj(h.values[j]);
            worst = std::max(worst, std::abs(diff));
        }
    }
    return worst;
}

}  // namespace flatprior
