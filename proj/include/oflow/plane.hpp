#pragma once

#include <cmath>
#include <stdexcept>

#include "oflow/volume.hpp"

namespace oflow {

/// Resection plane. Originals are axis-aligned through the grid center;
/// augmented pairs carry a rotated/shifted point-normal form.
struct PlaneSpec {
    int axis = 2;                      // 0=x(i), 1=y(j), 2=z(k) for axis-aligned planes
    int index = 0;                     // slab center slice for axis-aligned planes
    double point[3] = {0.0, 0.0, 0.0}; // a point on the plane, voxel coords
    double normal[3] = {0.0, 0.0, 1.0};
    bool axis_aligned = true;

    static PlaneSpec centered(const GridShape& s, int axis = 2) {
        if (axis < 0 || axis > 2) throw std::invalid_argument("PlaneSpec: axis must be 0..2");
        PlaneSpec p;
        p.axis = axis;
        const int n = axis == 0 ? s.nx : axis == 1 ? s.ny : s.nz;
        p.index = n / 2;
        p.point[0] = 0.5 * (s.nx - 1);
        p.point[1] = 0.5 * (s.ny - 1);
        p.point[2] = 0.5 * (s.nz - 1);
        p.normal[0] = p.normal[1] = p.normal[2] = 0.0;
        p.normal[axis] = 1.0;
        p.axis_aligned = true;
        return p;
    }

    /// Unsigned distance from a voxel to the plane, in voxels.
    double distance(double i, double j, double k) const {
        const double dx = i - point[0], dy = j - point[1], dz = k - point[2];
        return std::fabs(dx * normal[0] + dy * normal[1] + dz * normal[2]);
    }
};

}  // namespace oflow
