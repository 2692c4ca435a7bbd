#pragma once

// The library is compiled twice: the default single-precision build used by
// the tools, and a double-precision build (DATML_DOUBLE) used where central
// finite differences need more headroom than float32 offers. Each build lives
// in its own inline namespace so both can be linked into one binary.

#ifdef DATML_DOUBLE
#define DATML_ABI f64
#else
#define DATML_ABI f32
#endif

namespace datml::inline DATML_ABI {

#ifdef DATML_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

}  // namespace datml::inline DATML_ABI
