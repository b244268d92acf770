#pragma once

#include <cmath>
#include <cstddef>

#if defined(SNERF_HAVE_LIBMVEC) && defined(__AVX2__)
#include <immintrin.h>
extern "C" __m256d _ZGVdN4v_sin(__m256d);
extern "C" __m256d _ZGVdN4v_cos(__m256d);
#define SNERF_VECTOR_TRIG 1
#endif

namespace snerf::vmath {

// Elementwise out[i] = sin(scale * in[i]) (and cos). Every element goes through
// the same code path regardless of its position in the buffer, so results do
// not depend on batch layout.
namespace detail {

#ifdef SNERF_VECTOR_TRIG
template <__m256d (*Fn)(__m256d)>
inline void apply(const double* in, double* out, std::size_t n, double scale) {
  const __m256d s = _mm256_set1_pd(scale);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, Fn(_mm256_mul_pd(_mm256_loadu_pd(in + i), s)));
  if (i < n) {
    alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t k = 0; i + k < n; ++k) buf[k] = in[i + k];
    _mm256_store_pd(buf, Fn(_mm256_mul_pd(_mm256_load_pd(buf), s)));
    for (std::size_t k = 0; i + k < n; ++k) out[i + k] = buf[k];
  }
}
#endif

}  // namespace detail

inline void sin_scaled(const double* in, double* out, std::size_t n, double scale) {
#ifdef SNERF_VECTOR_TRIG
  detail::apply<_ZGVdN4v_sin>(in, out, n, scale);
#else
  for (std::size_t i = 0; i < n; ++i) out[i] = std::sin(in[i] * scale);
#endif
}

inline void cos_scaled(const double* in, double* out, std::size_t n, double scale) {
#ifdef SNERF_VECTOR_TRIG
  detail::apply<_ZGVdN4v_cos>(in, out, n, scale);
#else
  for (std::size_t i = 0; i < n; ++i) out[i] = std::cos(in[i] * scale);
#endif
}

}  // namespace snerf::vmath
