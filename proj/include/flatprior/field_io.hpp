#pragma once

// FLD1 container: an ASCII magic line, one JSON header line, then raw
// little-endian float64 payload. Fields carry the grid geometry; spectra
// additionally carry bin centers and multiplicities so a file is
// self-describing.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flatprior/fieldops.hpp"
#include "flatprior/grid.hpp"

namespace flatprior {

static_assert(std::endian::native == std::endian::little,
              "FLD1 writer assumes a little-endian host");

struct SpectrumFile {
    Grid2D grid;
    std::vector<double> bin_centers;
    std::vector<std::size_t> multiplicities;
    std::vector<double> values;
};

namespace detail {

inline void write_fld1(const std::string& path, const nlohmann::json& header,
                       std::span<const double> payload) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("FLD1: cannot open for writing: " + path);
    out << "FLD1\n" << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw std::runtime_error("FLD1: write failed: " + path);
}

inline nlohmann::json read_fld1(const std::string& path, std::vector<double>& payload) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("FLD1: cannot open: " + path);
    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != "FLD1")
        throw std::runtime_error("FLD1: bad magic in " + path);
    if (!std::getline(in, header_line))
        throw std::runtime_error("FLD1: missing header in " + path);
    nlohmann::json header = nlohmann::json::parse(header_line);
    const auto length = header.at("length").get<std::size_t>();
    payload.resize(length);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(length * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != length * sizeof(double))
        throw std::runtime_error("FLD1: truncated payload in " + path);
    return header;
}

}  // namespace detail

inline void write_field(const std::string& path, const Field2D& field) {
    nlohmann::json header = {{"n_side", field.grid.n_side},
                             {"pixel_size", field.grid.pixel_size},
                             {"kind", "real"},
                             {"length", field.values.size()}};
    detail::write_fld1(path, header, field.values);
}

// Data vectors ride in the same container with the grid they were cut from.
inline void write_data_vector(const std::string& path, const Grid2D& grid,
                              std::span<const double> values) {
    nlohmann::json header = {{"n_side", grid.n_side},
                             {"pixel_size", grid.pixel_size},
                             {"kind", "real"},
                             {"length", values.size()}};
    detail::write_fld1(path, header, values);
}

inline void write_spectrum(const std::string& path, const SpectralBinning& sb,
                           std::span<const double> values) {
    if (values.size() != sb.n_bins)
        throw std::invalid_argument("write_spectrum: wrong bin count");
    nlohmann::json header = {{"n_side", sb.grid.n_side},
                             {"pixel_size", sb.grid.pixel_size},
                             {"kind", "spectrum"},
                             {"length", values.size()},
                             {"bin_centers", sb.bin_centers},
                             {"multiplicities", sb.multiplicities}};
    detail::write_fld1(path, header, values);
}

// Reads a kind:"real" file. Throws if the payload is not a full grid; use
// read_data_vector for partial payloads.
inline Field2D read_field(const std::string& path) {
    std::vector<double> payload;
    auto header = detail::read_fld1(path, payload);
    if (header.at("kind").get<std::string>() != "real")
        throw std::runtime_error("read_field: not a real field: " + path);
    Grid2D grid(header.at("n_side").get<int>(), header.at("pixel_size").get<double>());
    return Field2D(grid, std::move(payload));
}

inline std::vector<double> read_data_vector(const std::string& path) {
    std::vector<double> payload;
    auto header = detail::read_fld1(path, payload);
    if (header.at("kind").get<std::string>() != "real")
        throw std::runtime_error("read_data_vector: not a real payload: " + path);
    return payload;
}

inline SpectrumFile read_spectrum(const std::string& path) {
    SpectrumFile sf;
    std::vector<double> payload;
    auto header = detail::read_fld1(path, payload);
    if (header.at("kind").get<std::string>() != "spectrum")
        throw std::runtime_error("read_spectrum: not a spectrum: " + path);
    sf.grid = Grid2D(header.at("n_side").get<int>(), header.at("pixel_size").get<double>());
    sf.bin_centers = header.at("bin_centers").get<std::vector<double>>();
    sf.multiplicities = header.at("multiplicities").get<std::vector<std::size_t>>();
    sf.values = std::move(payload);
    return sf;
}

}  // namespace flatprior
