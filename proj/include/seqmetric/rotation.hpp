#pragma once

#include <array>
#include <span>

#include "seqmetric/motion.hpp"

namespace seqmetric {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& a);
double frobenius_distance(const Mat3& a, const Mat3& b);

Mat3 axis_rotation(Channel axis, double radians);

/// Composes per-channel rotations in file order, each right-multiplied:
/// R = R(order[0]) * R(order[1]) * R(order[2]).
Mat3 euler_to_matrix(const Vec3& angles_deg, std::span<const Channel, 3> order);

/// Axis-angle vector theta * u with theta in [0, pi].
Vec3 matrix_to_expmap(const Mat3& r);
Mat3 expmap_to_matrix(const Vec3& w);

Vec3 euler_to_expmap(const Vec3& angles_deg, std::span<const Channel, 3> order);

/// Removes the heading (rotation about +Y) from a root orientation.
Mat3 remove_yaw(const Mat3& r);

}  // namespace seqmetric
