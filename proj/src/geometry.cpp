#include "rtn/geometry.hpp"

#include <cmath>
#include <string>

#include "rtn/errors.hpp"

namespace rtn {

void GridSpec::validate() const {
  if (h_prime < 1) throw ContractError("GridSpec: h_prime must be >= 1");
  if (w_prime < 2) throw ContractError("GridSpec: w_prime must be >= 2");
  if (!(r_min > 0.0) || !std::isfinite(r_min)) throw ContractError("GridSpec: r_min must be > 0");
  if (!(r_max > r_min) || !std::isfinite(r_max))
    throw ContractError("GridSpec: r_max must exceed r_min");
}

double GridSpec::rho_step() const { return (std::log(r_max) - std::log(r_min)) / (w_prime - 1); }

double GridSpec::rho_at(double col) const {
  const double lo = std::log(r_min);
  if (col == w_prime - 1) return std::log(r_max);
  return lo + col * rho_step();
}

double normalize_angle(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  // fmod of a tiny negative number can round up to exactly 2*pi.
  if (r >= kTwoPi) r = 0.0;
  return r;
}

LogPolarPoint to_log_polar(CartesianPoint p, CartesianPoint pole) {
  const double dx = p.x - pole.x;
  const double dy = p.y - pole.y;
  if (dx == 0.0 && dy == 0.0) throw DomainError("to_log_polar: point coincides with the pole");
  return {normalize_angle(std::atan2(dy, dx)), std::log(std::hypot(dx, dy))};
}

CartesianPoint from_log_polar(LogPolarPoint q, CartesianPoint pole) {
  if (!std::isfinite(q.rho) || !std::isfinite(q.phi))
    throw DomainError("from_log_polar: non-finite coordinate");
  const double r = std::exp(q.rho);
  return {r * std::cos(q.phi) + pole.x, r * std::sin(q.phi) + pole.y};
}

LogPolarGrid make_grid(const GridSpec& spec) {
  spec.validate();
  LogPolarGrid g{spec, {}};
  g.cells.reserve(static_cast<std::size_t>(spec.h_prime) * spec.w_prime);
  for (int i = 0; i < spec.h_prime; ++i) {
    const double phi = spec.phi_at(i);
    for (int j = 0; j < spec.w_prime; ++j) g.cells.push_back({phi, spec.rho_at(j)});
  }
  return g;
}

CartesianPoint rotate_point(CartesianPoint p, CartesianPoint pole, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double dx = p.x - pole.x;
  const double dy = p.y - pole.y;
  return {pole.x + c * dx - s * dy, pole.y + s * dx + c * dy};
}

CartesianPoint scale_point(CartesianPoint p, CartesianPoint pole, double c) {
  if (!(c > 0.0)) throw DomainError("scale_point: factor must be positive, got " + std::to_string(c));
  return {pole.x + c * (p.x - pole.x), pole.y + c * (p.y - pole.y)};
}

}  // namespace rtn
