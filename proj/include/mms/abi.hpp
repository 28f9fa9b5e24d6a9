#pragma once

// Scalar precision is part of the ABI. The 32- and 64-bit builds live in
// separate inline namespaces so one binary can link both.
#ifdef MMS_DOUBLE
#define MMS_BEGIN_NAMESPACE \
  namespace mms {           \
  inline namespace f64 {
#else
#define MMS_BEGIN_NAMESPACE \
  namespace mms {           \
  inline namespace f32 {
#endif
#define MMS_END_NAMESPACE \
  }                       \
  }
