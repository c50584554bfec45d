#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace oflow {

// Exit-code mapping used by the CLI: 2 usage, 3 data, 4 numeric, 5 io.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// HU window applied to every stored volume.
inline constexpr double kHuWindowLo = -100.0;
inline constexpr double kHuWindowHi = 1100.0;
inline constexpr double kHuWindowWidth = kHuWindowHi - kHuWindowLo;

// Bone threshold shared by the weight map and the Dice/MAE masks.
inline constexpr double kBoneThresholdHu = 300.0;

inline double clamp_hu(double v) {
    return v < kHuWindowLo ? kHuWindowLo : (v > kHuWindowHi ? kHuWindowHi : v);
}

inline bool nearly_equal(double a, double b, double tol) {
    return std::fabs(a - b) <= tol;
}

}  // namespace oflow
