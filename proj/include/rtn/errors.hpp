#pragma once

#include <stdexcept>
#include <string>

namespace rtn {

// Caller broke a documented precondition (shape mismatch, bad layer config).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Mathematical domain violation, e.g. log of a zero radius.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Training produced a NaN/Inf loss or activation.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RTN_REQUIRE(cond, msg)                        \
  do {                                                \
    if (!(cond)) throw ::rtn::ContractError(msg);     \
  } while (0)

}  // namespace rtn
