/**
 * @file fpenv.hpp
 * @brief Flush-to-zero scope for training and inference.
 *
 * Adam's second-moment estimates and dead activations drift into subnormal
 * range, which slows x86 float arithmetic by an order of magnitude. The mode
 * is per thread, so every worker enters its own scope.
 */
#pragma once

#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace asmnet::nn {

class FlushDenormals {
public:
  FlushDenormals() {
#if defined(__SSE2__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040u); // FTZ | DAZ
#endif
  }
  ~FlushDenormals() {
#if defined(__SSE2__)
    _mm_setcsr(saved_);
#endif
  }
  FlushDenormals(const FlushDenormals &) = delete;
  FlushDenormals &operator=(const FlushDenormals &) = delete;

private:
  unsigned saved_ = 0;
};

} // namespace asmnet::nn
