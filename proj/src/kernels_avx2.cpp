#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <limits>

#include "bavsl/kernels.hpp"

namespace bavsl::kernels::detail {

// target("avx2") without "fma": the compiler cannot contract mul+add, which
// keeps every lane bit-identical to the scalar reference.
__attribute__((target("avx2"))) std::size_t running_cost_avx2(const CostTable& t, const double* tau,
                                                                 double* out, std::size_t n) {
    const __m256d length = _mm256_set1_pd(t.length);
    const __m256d lo = _mm256_set1_pd(t.v_lo);
    const __m256d hi = _mm256_set1_pd(t.v_hi);
    const __m256d zero = _mm256_setzero_pd();
    const __m256d nan = _mm256_set1_pd(std::numeric_limits<double>::quiet_NaN());
    const __m256d mu1 = _mm256_set1_pd(t.mu1);
    const __m256d mu2 = _mm256_set1_pd(t.mu2);
    std::size_t bad = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d x = _mm256_loadu_pd(tau + i);
        const __m256d v = _mm256_div_pd(length, x);
        __m256d ok = _mm256_cmp_pd(x, zero, _CMP_GT_OQ);
        ok = _mm256_and_pd(ok, _mm256_cmp_pd(v, lo, _CMP_GE_OQ));
        ok = _mm256_and_pd(ok, _mm256_cmp_pd(v, hi, _CMP_LE_OQ));
        __m256d e[3];
        for (int c = 0; c < 3; ++c) {
            __m256d num = _mm256_mul_pd(_mm256_set1_pd(t.alpha[c]), v);
            num = _mm256_add_pd(num, _mm256_set1_pd(t.beta[c]));
            num = _mm256_mul_pd(num, v);
            num = _mm256_add_pd(num, _mm256_set1_pd(t.gamma[c]));
            num = _mm256_add_pd(num, _mm256_div_pd(_mm256_set1_pd(t.delta[c]), v));
            __m256d den = _mm256_mul_pd(_mm256_set1_pd(t.epsilon[c]), v);
            den = _mm256_add_pd(den, _mm256_set1_pd(t.zeta[c]));
            den = _mm256_mul_pd(den, v);
            den = _mm256_add_pd(den, _mm256_set1_pd(t.eta[c]));
            e[c] = _mm256_div_pd(num, den);
        }
        __m256d mix = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(t.lambda[0]), e[0]),
                                    _mm256_mul_pd(_mm256_set1_pd(t.lambda[1]), e[1]));
        mix = _mm256_add_pd(mix, _mm256_mul_pd(_mm256_set1_pd(t.lambda[2]), e[2]));
        const __m256d cost = _mm256_add_pd(_mm256_mul_pd(mu1, x), _mm256_mul_pd(mu2, mix));
        _mm256_storeu_pd(out + i, _mm256_blendv_pd(nan, cost, ok));
        bad += 4 - static_cast<std::size_t>(__builtin_popcount(static_cast<unsigned>(_mm256_movemask_pd(ok))));
    }
    return bad + running_cost_scalar(t, tau + i, out + i, n - i);
}

__attribute__((target("avx2"))) double weighted_product_sum_avx2(const double* w, const double* a,
                                                                  const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d wa = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(a + i));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(wa, _mm256_loadu_pd(b + i)));
    }
    alignas(32) double lane[4];
    _mm256_store_pd(lane, acc);
    // Tail continues in the lane each index would have occupied.
    for (; i < n; ++i) lane[i % 4] += (w[i] * a[i]) * b[i];
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

}  // namespace bavsl::kernels::detail

#endif
