#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flatprior {

// Failure inside one layer of a hierarchical transform; carries the layer index
// so callers can report which coordinate went bad.
class TransformError : public std::runtime_error {
public:
    TransformError(std::size_t layer, const std::string& what)
        : std::runtime_error("layer " + std::to_string(layer) + ": " + what),
          layer_(layer) {}
    std::size_t layer() const { return layer_; }

private:
    std::size_t layer_;
};

// Conjugate gradients ran out of budget. Keeps the best iterate so a caller
// that wants to limp on can.
class CgFailure : public std::runtime_error {
public:
    CgFailure(std::string what, std::vector<double> best, double rel_residual, int iterations)
        : std::runtime_error(std::move(what)),
          best_iterate(std::move(best)),
          rel_residual(rel_residual),
          iterations(iterations) {}

    std::vector<double> best_iterate;
    double rel_residual;
    int iterations;
};

// A caller violated a staleness/consistency contract (e.g. evaluating a
// sample-based objective built for a different spectrum).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Lossless coordinate conversion failed its round-trip check.
class ConversionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace flatprior
