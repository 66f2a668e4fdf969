#include "seqmetric/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace seqmetric {

namespace {

constexpr double kSmallAngle = 1e-7;
// Below this distance from pi the axis comes from the symmetric part.
constexpr double kNearPi = 1e-3;

Mat3 identity3() { return Mat3{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

}  // namespace

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat3 mat_transpose(const Mat3& a) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
  return t;
}

double frobenius_distance(const Mat3& a, const Mat3& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
  return std::sqrt(s);
}

Mat3 axis_rotation(Channel axis, double radians) {
  const double c = std::cos(radians), s = std::sin(radians);
  switch (axis) {
    case Channel::Xrotation: return Mat3{{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
    case Channel::Yrotation: return Mat3{{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
    case Channel::Zrotation: return Mat3{{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
    default: throw std::invalid_argument("axis_rotation: not a rotation channel");
  }
}

Mat3 euler_to_matrix(const Vec3& angles_deg, std::span<const Channel, 3> order) {
  Mat3 r = identity3();
  for (int i = 0; i < 3; ++i) {
    r = mat_mul(r, axis_rotation(order[i], angles_deg[i] * std::numbers::pi / 180.0));
  }
  return r;
}

Vec3 matrix_to_expmap(const Mat3& r) {
  const double trace = r[0][0] + r[1][1] + r[2][2];
  const double cos_theta = std::clamp((trace - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vec3 skew{r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]};  // 2 sin(theta) u
  if (theta < kSmallAngle) return Vec3{skew[0] / 2.0, skew[1] / 2.0, skew[2] / 2.0};
  if (std::numbers::pi - theta < kNearPi) {
    // (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) u u^T; read u off the largest diagonal.
    const double one_minus = 1.0 - cos_theta;
    Mat3 b{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) b[i][j] = (r[i][j] + r[j][i]) / 2.0 - (i == j ? cos_theta : 0.0);
    int k = 0;
    for (int i = 1; i < 3; ++i)
      if (b[i][i] > b[k][k]) k = i;
    Vec3 u{};
    u[k] = std::sqrt(std::max(b[k][k] / one_minus, 0.0));
    for (int j = 0; j < 3; ++j)
      if (j != k) u[j] = b[k][j] / (one_minus * u[k]);
    const double norm = std::hypot(u[0], u[1], u[2]);
    const double sign = (u[0] * skew[0] + u[1] * skew[1] + u[2] * skew[2]) < 0.0 ? -1.0 : 1.0;
    return Vec3{sign * theta * u[0] / norm, sign * theta * u[1] / norm, sign * theta * u[2] / norm};
  }
  const double f = theta / (2.0 * std::sin(theta));
  return Vec3{f * skew[0], f * skew[1], f * skew[2]};
}

Mat3 expmap_to_matrix(const Vec3& w) {
  const double theta = std::hypot(w[0], w[1], w[2]);
  if (theta < kSmallAngle) {
    return Mat3{{{1, -w[2], w[1]}, {w[2], 1, -w[0]}, {-w[1], w[0], 1}}};
  }
  const Vec3 u{w[0] / theta, w[1] / theta, w[2] / theta};
  const double c = std::cos(theta), s = std::sin(theta), v = 1.0 - c;
  return Mat3{{{c + u[0] * u[0] * v, u[0] * u[1] * v - u[2] * s, u[0] * u[2] * v + u[1] * s},
               {u[1] * u[0] * v + u[2] * s, c + u[1] * u[1] * v, u[1] * u[2] * v - u[0] * s},
               {u[2] * u[0] * v - u[1] * s, u[2] * u[1] * v + u[0] * s, c + u[2] * u[2] * v}}};
}

Vec3 euler_to_expmap(const Vec3& angles_deg, std::span<const Channel, 3> order) {
  return matrix_to_expmap(euler_to_matrix(angles_deg, order));
}

Mat3 remove_yaw(const Mat3& r) {
  // Heading of the rotated +Z axis projected on the ground plane.
  const double yaw = std::atan2(r[0][2], r[2][2]);
  return mat_mul(axis_rotation(Channel::Yrotation, -yaw), r);
}

}  // namespace seqmetric
