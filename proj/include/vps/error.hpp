#pragma once

#include <stdexcept>
#include <string>

// Errors are plain exceptions; each subclass carries a stable machine-readable
// kind() used by the CLI to report failures on a single line.
namespace vps {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define VPS_DEFINE_ERROR(Name)                                        \
  class Name : public Error {                                         \
   public:                                                            \
    using Error::Error;                                               \
    const char* kind() const noexcept override { return #Name; }      \
  }

VPS_DEFINE_ERROR(ShapeError);
VPS_DEFINE_ERROR(FormatError);
VPS_DEFINE_ERROR(RangeError);
VPS_DEFINE_ERROR(ConfigError);
VPS_DEFINE_ERROR(SamplingError);
VPS_DEFINE_ERROR(IntegrityError);
VPS_DEFINE_ERROR(CapacityError);
VPS_DEFINE_ERROR(NumericError);
VPS_DEFINE_ERROR(ContractError);
VPS_DEFINE_ERROR(AlignmentError);
VPS_DEFINE_ERROR(CheckpointError);
VPS_DEFINE_ERROR(IoError);

#undef VPS_DEFINE_ERROR

}  // namespace vps
