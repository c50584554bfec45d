#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oflow/common.hpp"
#include "oflow/volume.hpp"

namespace oflow {

// ".vol" format: one UTF-8 JSON header line terminated by '\n' with keys
// {magic:"OFVOL1", nx, ny, nz, spacing_mm, dtype, role}, then little-endian
// f32 payload in row-major (k fastest) order; vector fields use dtype "f32x3"
// with interleaved (vx,vy,vz). Round trips are bit-exact.

namespace detail {

inline void require_little_endian() {
    const uint32_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    if (b != 1) throw IoError("vol io: big-endian hosts are not supported");
}

inline nlohmann::json read_vol_header(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("vol io: missing header line in " + path);
    nlohmann::json h = nlohmann::json::parse(line, nullptr, false);
    if (h.is_discarded()) throw IoError("vol io: malformed header JSON in " + path);
    if (h.value("magic", "") != "OFVOL1") throw IoError("vol io: bad magic in " + path);
    return h;
}

inline GridShape shape_from_header(const nlohmann::json& h) {
    return GridShape(h.at("nx").get<int>(), h.at("ny").get<int>(), h.at("nz").get<int>(),
                     h.at("spacing_mm").get<double>());
}

}  // namespace detail

inline void write_vol(const std::string& path, const ScalarVolume& vol) {
    detail::require_little_endian();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("vol io: cannot open for write: " + path);
    nlohmann::json h = {{"magic", "OFVOL1"}, {"nx", vol.shape.nx}, {"ny", vol.shape.ny},
                        {"nz", vol.shape.nz}, {"spacing_mm", vol.shape.spacing_mm},
                        {"dtype", "f32"}, {"role", to_string(vol.role)}};
    out << h.dump() << '\n';
    std::vector<float> buf(vol.data.size());
    for (size_t p = 0; p < buf.size(); ++p) buf[p] = static_cast<float>(vol.data[p]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("vol io: short write: " + path);
}

inline void write_vol(const std::string& path, const VectorField3& f) {
    detail::require_little_endian();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("vol io: cannot open for write: " + path);
    nlohmann::json h = {{"magic", "OFVOL1"}, {"nx", f.shape.nx}, {"ny", f.shape.ny},
                        {"nz", f.shape.nz}, {"spacing_mm", f.shape.spacing_mm},
                        {"dtype", "f32x3"}, {"role", to_string(f.role)}};
    out << h.dump() << '\n';
    std::vector<float> buf(f.data.size());
    for (size_t p = 0; p < buf.size(); ++p) buf[p] = static_cast<float>(f.data[p]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("vol io: short write: " + path);
}

inline ScalarVolume read_vol_scalar(const std::string& path) {
    detail::require_little_endian();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("vol io: cannot open: " + path);
    const nlohmann::json h = detail::read_vol_header(in, path);
    if (h.value("dtype", "") != "f32") throw IoError("vol io: expected scalar f32 volume: " + path);
    ScalarVolume vol(detail::shape_from_header(h));
    vol.role = h.value("role", "intensity") == "velocity" ? ScalarRole::velocity : ScalarRole::intensity;
    std::vector<float> buf(vol.data.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw IoError("vol io: truncated payload: " + path);
    for (size_t p = 0; p < buf.size(); ++p) vol.data[p] = buf[p];
    return vol;
}

inline VectorField3 read_vol_vector(const std::string& path) {
    detail::require_little_endian();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("vol io: cannot open: " + path);
    const nlohmann::json h = detail::read_vol_header(in, path);
    if (h.value("dtype", "") != "f32x3") throw IoError("vol io: expected f32x3 field: " + path);
    const std::string role = h.value("role", "displacement");
    VectorField3 f(detail::shape_from_header(h),
                   role == "svf" ? VectorRole::svf
                                 : role == "image_velocity" ? VectorRole::image_velocity
                                                            : VectorRole::displacement);
    std::vector<float> buf(f.data.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw IoError("vol io: truncated payload: " + path);
    for (size_t p = 0; p < buf.size(); ++p) f.data[p] = buf[p];
    return f;
}

/// Three central orthogonal slices as binary PGM (P5), [-100,1100] -> [0,255].
inline void dump_slices(const ScalarVolume& vol, const std::string& out_prefix) {
    const GridShape& s = vol.shape;
    auto to_byte = [](double v) {
        double t = (v - kHuWindowLo) / kHuWindowWidth * 255.0;
        if (t < 0.0) t = 0.0;
        if (t > 255.0) t = 255.0;
        return static_cast<unsigned char>(t + 0.5);
    };
    auto write_pgm = [&](const std::string& path, int rows, int cols, auto&& value_at) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("dump_slices: cannot open " + path);
        out << "P5\n" << cols << " " << rows << "\n255\n";
        std::vector<unsigned char> row(cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) row[c] = to_byte(value_at(r, c));
            out.write(reinterpret_cast<const char*>(row.data()), cols);
        }
    };
    const int ci = s.nx / 2, cj = s.ny / 2, ck = s.nz / 2;
    write_pgm(out_prefix + "_x.pgm", s.ny, s.nz, [&](int r, int c) { return vol.at(ci, r, c); });
    write_pgm(out_prefix + "_y.pgm", s.nx, s.nz, [&](int r, int c) { return vol.at(r, cj, c); });
    write_pgm(out_prefix + "_z.pgm", s.nx, s.ny, [&](int r, int c) { return vol.at(r, c, ck); });
}

}  // namespace oflow
