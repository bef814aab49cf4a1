#pragma once

// Scalar type and namespace selection. The library is normally built with
// 32-bit floats; defining VPS_REAL_DOUBLE builds a double-precision variant
// whose symbols live in a distinct inline namespace, so both variants can be
// linked into one binary (used by the finite-difference gradient checks).

#ifdef VPS_REAL_DOUBLE
#define VPS_BEGIN_NAMESPACE \
  namespace vps {           \
  inline namespace f64 {
#else
#define VPS_BEGIN_NAMESPACE \
  namespace vps {           \
  inline namespace f32 {
#endif
#define VPS_END_NAMESPACE \
  }                       \
  }

VPS_BEGIN_NAMESPACE

#ifdef VPS_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

VPS_END_NAMESPACE
