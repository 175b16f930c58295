#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace bapt {

/// Every stochastic operation takes one of these explicitly.
using Rng = std::mt19937_64;

inline std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng deserialize_rng(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  return rng;
}

}  // namespace bapt
