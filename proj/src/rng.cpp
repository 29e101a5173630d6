#include "sabm/rng.hpp"

#include <cmath>
#include <numbers>

namespace sabm {

double to_standard_normal(std::uint64_t raw_a, std::uint64_t raw_b) {
  // 1 - u keeps the argument of log in (0, 1].
  const double u1 = 1.0 - to_unit(raw_a);
  const double u2 = to_unit(raw_b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace sabm
