#include "bavsl/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "bavsl/errors.hpp"

namespace bavsl::kernels {

namespace {

std::atomic<int> g_forced{-1};

Isa detect() {
    const char* env = std::getenv("BAVSL_KERNELS");
    if (env != nullptr && std::strcmp(env, "scalar") == 0) return Isa::Scalar;
    return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

}  // namespace

const char* isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
    if (isa == Isa::Scalar) return true;
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

Isa active_isa() {
    const int forced = g_forced.load(std::memory_order_relaxed);
    if (forced >= 0) return static_cast<Isa>(forced);
    static const Isa detected = detect();
    return detected;
}

void force_isa(std::optional<Isa> isa) {
    if (isa && !isa_available(*isa)) throw ConfigError(std::string("kernel variant unavailable: ") + isa_name(*isa));
    g_forced.store(isa ? static_cast<int>(*isa) : -1, std::memory_order_relaxed);
}

std::size_t running_cost_batch(Isa isa, const CostWeights& weights, const CurveSet& curves,
                               const double* tau, double* out, std::size_t n) {
    const detail::CostTable table = detail::make_table(weights, curves);
#if defined(__x86_64__) || defined(__i386__)
    if (isa == Isa::Avx2) return detail::running_cost_avx2(table, tau, out, n);
#endif
    (void)isa;
    return detail::running_cost_scalar(table, tau, out, n);
}

std::size_t running_cost_batch(const CostWeights& weights, const CurveSet& curves, const double* tau,
                               double* out, std::size_t n) {
    return running_cost_batch(active_isa(), weights, curves, tau, out, n);
}

double weighted_product_sum(Isa isa, const double* w, const double* a, const double* b, std::size_t n) {
#if defined(__x86_64__) || defined(__i386__)
    if (isa == Isa::Avx2) return detail::weighted_product_sum_avx2(w, a, b, n);
#endif
    (void)isa;
    return detail::weighted_product_sum_scalar(w, a, b, n);
}

double weighted_product_sum(const double* w, const double* a, const double* b, std::size_t n) {
    return weighted_product_sum(active_isa(), w, a, b, n);
}

}  // namespace bavsl::kernels
