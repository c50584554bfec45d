#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "oflow/rng.hpp"
#include "oflow/volume_io.hpp"

using namespace oflow;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path temp_dir() {
    auto d = fs::temp_directory_path() / "oflow_io_test";
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("vol round trip is bit-exact", "[io]") {
    auto dir = temp_dir();
    Rng rng(123);

    SECTION("scalar volume") {
        ScalarVolume v(GridShape(7, 0.5));
        for (double& x : v.data) x = rng.uniform(-100.0, 1100.0);
        const auto p1 = (dir / "a.vol").string();
        const auto p2 = (dir / "b.vol").string();
        write_vol(p1, v);
        ScalarVolume r = read_vol_scalar(p1);
        CHECK(r.shape == v.shape);
        for (size_t p = 0; p < v.data.size(); ++p)
            CHECK(r.data[p] == static_cast<double>(static_cast<float>(v.data[p])));
        write_vol(p2, r);
        CHECK(read_bytes(p1) == read_bytes(p2));
    }
    SECTION("vector field keeps the role tag") {
        VectorField3 f(GridShape(5), VectorRole::svf);
        for (double& x : f.data) x = rng.uniform(-2.0, 2.0);
        const auto p1 = (dir / "f.vol").string();
        write_vol(p1, f);
        VectorField3 r = read_vol_vector(p1);
        CHECK(r.role == VectorRole::svf);
        CHECK(r.shape == f.shape);
        const auto p2 = (dir / "g.vol").string();
        write_vol(p2, r);
        CHECK(read_bytes(p1) == read_bytes(p2));
    }
    SECTION("bad magic is rejected") {
        const auto p = (dir / "bad.vol").string();
        std::ofstream out(p, std::ios::binary);
        out << "{\"magic\":\"NOPE\"}\n";
        out.close();
        CHECK_THROWS_AS(read_vol_scalar(p), IoError);
    }
    SECTION("truncated payload is rejected") {
        ScalarVolume v(GridShape(4));
        const auto p = (dir / "t.vol").string();
        write_vol(p, v);
        auto bytes = read_bytes(p);
        std::ofstream out(p, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
        out.close();
        CHECK_THROWS_AS(read_vol_scalar(p), IoError);
    }
}

TEST_CASE("pgm slice dumps", "[io]") {
    auto dir = temp_dir();

    SECTION("constant -100 maps to all zeros, 1100 to all 255") {
        GridShape s(6);
        ScalarVolume lo(s, -100.0), hi(s, 1100.0);
        dump_slices(lo, (dir / "lo").string());
        dump_slices(hi, (dir / "hi").string());
        auto check_all = [&](const std::string& path, unsigned char want) {
            auto bytes = read_bytes(path);
            REQUIRE(bytes.size() > 11);
            // header "P5\n6 6\n255\n" then 36 payload bytes
            const size_t payload = 36;
            for (size_t q = bytes.size() - payload; q < bytes.size(); ++q)
                CHECK(static_cast<unsigned char>(bytes[q]) == want);
        };
        check_all((dir / "lo_x.pgm").string(), 0);
        check_all((dir / "hi_x.pgm").string(), 255);
        check_all((dir / "hi_z.pgm").string(), 255);
    }
    SECTION("quantization error is bounded by half a gray step") {
        GridShape s(4);
        Rng rng(5);
        ScalarVolume v(s);
        for (double& x : v.data) x = rng.uniform(-100.0, 1100.0);
        // round trip one value through the byte mapping
        for (double x : v.data) {
            const double b = std::floor((x + 100.0) / 1200.0 * 255.0 + 0.5);
            const double back = b / 255.0 * 1200.0 - 100.0;
            CHECK(std::fabs(back - x) <= 1200.0 / 255.0 / 2.0 + 1e-9);
        }
    }
}
