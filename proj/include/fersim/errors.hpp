// Exception hierarchy shared by every fersim module.
#pragma once

#include <stdexcept>
#include <string>

namespace fersim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Stable machine-readable name, used by the CLI error line.
  virtual const char* kind() const noexcept { return "Error"; }
};

#define FERSIM_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                       \
   public:                                                          \
    using Error::Error;                                             \
    const char* kind() const noexcept override { return #Name; }    \
  };

FERSIM_DEFINE_ERROR(FormatError)
FERSIM_DEFINE_ERROR(IncompleteStoreError)
FERSIM_DEFINE_ERROR(DataError)
FERSIM_DEFINE_ERROR(KeyError)
FERSIM_DEFINE_ERROR(IoError)
FERSIM_DEFINE_ERROR(NumericError)
FERSIM_DEFINE_ERROR(RangeError)
FERSIM_DEFINE_ERROR(ContractError)
FERSIM_DEFINE_ERROR(ConfigError)
FERSIM_DEFINE_ERROR(DegenerateBaselineError)

#undef FERSIM_DEFINE_ERROR

}  // namespace fersim
