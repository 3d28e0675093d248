#pragma once

#include <cstddef>
#include <optional>

#include "bavsl/emissions.hpp"

// Batch kernels on the simulation hot path. Every variant performs the same
// IEEE operations in the same order (no fused multiply-add, lane-striped
// reductions), so all variants are bit-identical to the scalar reference.
namespace bavsl::kernels {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa);
bool isa_available(Isa isa);

// Best available variant unless overridden by force_isa() or by the
// environment variable BAVSL_KERNELS=scalar.
Isa active_isa();
void force_isa(std::optional<Isa> isa);

// out[i] = running cost at travel time tau[i]; NaN where the mean speed falls
// outside the curves' common range or tau is not positive. Returns the NaN count.
std::size_t running_cost_batch(const CostWeights& weights, const CurveSet& curves,
                               const double* tau, double* out, std::size_t n);
std::size_t running_cost_batch(Isa isa, const CostWeights& weights, const CurveSet& curves,
                               const double* tau, double* out, std::size_t n);

// sum_i w[i] * a[i] * b[i], accumulated in four interleaved lanes.
double weighted_product_sum(const double* w, const double* a, const double* b, std::size_t n);
double weighted_product_sum(Isa isa, const double* w, const double* a, const double* b,
                            std::size_t n);

namespace detail {

// Coefficients flattened for the vector paths.
struct CostTable {
    double mu1, mu2, length, v_lo, v_hi;
    double lambda[3];
    double alpha[3], beta[3], gamma[3], delta[3], epsilon[3], zeta[3], eta[3];
};

CostTable make_table(const CostWeights& weights, const CurveSet& curves);

std::size_t running_cost_scalar(const CostTable& t, const double* tau, double* out, std::size_t n);
double weighted_product_sum_scalar(const double* w, const double* a, const double* b, std::size_t n);

#if defined(__x86_64__) || defined(__i386__)
std::size_t running_cost_avx2(const CostTable& t, const double* tau, double* out, std::size_t n);
double weighted_product_sum_avx2(const double* w, const double* a, const double* b, std::size_t n);
#endif

}  // namespace detail

}  // namespace bavsl::kernels
