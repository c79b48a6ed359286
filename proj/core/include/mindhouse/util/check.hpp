#pragma once

#include <stdexcept>
#include <string>

namespace mindhouse {

/// Contract violation inside the library (bad shapes, broken invariants,
/// malformed files). Message is a single line suitable for CLI error output.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace mindhouse
