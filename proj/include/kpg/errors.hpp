#pragma once

#include <stdexcept>
#include <string>

namespace kpg {

// Violated precondition: bad shapes, out-of-range ids, invalid lengths.
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

// NaN/Inf produced or consumed by a numeric kernel.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace kpg
