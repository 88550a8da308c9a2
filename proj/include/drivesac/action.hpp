#pragma once

#include <algorithm>
#include <stdexcept>

namespace drivesac {

// Control command: throttle in [0,1], steer in [-1,1] (positive = left).
struct Action {
  double throttle = 0.0;
  double steer = 0.0;

  // Range-checking constructor tolerating only rounding-level excursions.
  static Action checked(double throttle, double steer) {
    const double tol = 1e-9;
    if (throttle < -tol || throttle > 1.0 + tol || steer < -1.0 - tol ||
        steer > 1.0 + tol)
      throw std::invalid_argument("action outside [0,1]x[-1,1]");
    return {std::clamp(throttle, 0.0, 1.0), std::clamp(steer, -1.0, 1.0)};
  }
};

}  // namespace drivesac
