#pragma once

// Coordinate mathematics of the log-polar map.
//
// Image convention: x runs along columns, y runs down rows. The angle
// phi = atan2(y - y_c, x - x_c) is therefore measured clockwise on screen,
// normalized to [0, 2*pi). rho is the natural log of the radius. All angles
// in this API are radians.

#include <numbers>
#include <vector>

namespace rtn {

struct CartesianPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const CartesianPoint&, const CartesianPoint&) = default;
};

struct LogPolarPoint {
  double phi = 0.0;
  double rho = 0.0;
  friend bool operator==(const LogPolarPoint&, const LogPolarPoint&) = default;
};

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Destination grid of a log-polar patch: h_prime rows sweep the angle,
/// w_prime columns sweep log-radius from log(r_min) to log(r_max).
struct GridSpec {
  int h_prime = 32;
  int w_prime = 32;
  double r_min = 1.0;
  double r_max = 40.0;

  /// Throws ContractError unless h' >= 1, w' >= 2 and 0 < r_min < r_max.
  void validate() const;
  double phi_step() const { return kTwoPi / h_prime; }
  double rho_step() const;
  double phi_at(double row) const { return row * phi_step(); }
  double rho_at(double col) const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Row-major (h_prime x w_prime) grid of log-polar coordinates.
struct LogPolarGrid {
  GridSpec spec;
  std::vector<LogPolarPoint> cells;

  const LogPolarPoint& at(int row, int col) const { return cells[row * spec.w_prime + col]; }
};

/// Wraps an angle into [0, 2*pi).
double normalize_angle(double a);

/// Throws DomainError when p coincides with the pole.
LogPolarPoint to_log_polar(CartesianPoint p, CartesianPoint pole);
CartesianPoint from_log_polar(LogPolarPoint q, CartesianPoint pole);

LogPolarGrid make_grid(const GridSpec& spec);

/// Rotation about `pole` by `angle` radians (positive = from +x toward +y).
CartesianPoint rotate_point(CartesianPoint p, CartesianPoint pole, double angle);
/// pole + c * (p - pole); c must be positive.
CartesianPoint scale_point(CartesianPoint p, CartesianPoint pole, double c);

}  // namespace rtn
