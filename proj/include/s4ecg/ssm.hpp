#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "s4ecg/tensor.hpp"

// Continuous-time linear state-space systems x' = A x + B u, y = C x + D u,
// their bilinear discretization, and the two equivalent ways of applying the
// discrete system to a sequence: the materialized convolution kernel
// (C̄B̄, C̄ĀB̄, C̄Ā²B̄, ...) and the explicit recurrence.
namespace s4ecg::ssm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class DiscretizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ContinuousSsm {
    Matrix A;  // N x N
    Vector B;  // N
    Vector C;  // N (row vector stored as a column)
    double D = 1.0;
    double log_step = 0.0;

    std::size_t state_dim() const { return static_cast<std::size_t>(A.rows()); }
    double step() const;
};

struct DiscreteSsm {
    Matrix Abar;
    Vector Bbar;
    Vector Cbar;
    double step = 0.0;

    std::size_t state_dim() const { return static_cast<std::size_t>(Abar.rows()); }
};

struct KernelCache {
    double step = 0.0;
    std::vector<double> values;

    std::size_t length() const { return values.size(); }
};

// HiPPO-LegS: A_nk = -sqrt(2n+1) sqrt(2k+1) for n > k, -(n+1) for n == k, 0 above the diagonal.
Matrix hippo_legs(std::size_t n);
// Matching input vector B_n = sqrt(2n+1).
Vector hippo_legs_input(std::size_t n);

// Ā = (I - Δ/2 A)^-1 (I + Δ/2 A), B̄ = (I - Δ/2 A)^-1 Δ B, C̄ = C.
DiscreteSsm discretize_bilinear(const ContinuousSsm& ssm, double step);

// k_t = C̄ Ā^t B̄ for t = 0..L-1, computed by repeated multiplication.
KernelCache materialize_kernel(const DiscreteSsm& dssm, std::size_t length);

enum class ConvMethod { automatic, direct, fft };

// Sequences at least this long use the FFT path under ConvMethod::automatic.
inline constexpr std::size_t kFftThreshold = 64;

// y_t = sum_{s<=t} k_s u_{t-s} + D u_t
std::vector<double> apply_convolution(const KernelCache& kernel, std::span<const double> u, double D,
                                      ConvMethod method = ConvMethod::automatic);

// x_{t+1} = Ā x_t + B̄ u_t, y_t = C̄ x_{t+1} + D u_t. Matches apply_convolution exactly.
std::vector<double> apply_recurrent(const DiscreteSsm& dssm, std::span<const double> u, double D,
                                    const std::optional<Vector>& x0 = std::nullopt);

// Step size to use at test_rate for a model whose step was learned at train_rate.
double rescale_step(double model_step, double train_rate, double test_rate);

double spectral_radius(const Matrix& m);

// Batched raw convolution on flat buffers: y[b,h,:] = kernel[h,:L] * u[b,h,:] (causal).
// kernel rows have length kernel_len >= len.
void causal_convolve(std::span<const double> u, std::span<const double> kernel, std::span<double> y,
                     std::size_t batch, std::size_t channels, std::size_t len, std::size_t kernel_len,
                     ConvMethod method);

// Differentiable operations used by the S4 layers. Parameters are stacked per channel:
// A [H, N, N], B [H, N], C [H, N], log_step [H]. The effective step of channel h is
// exp(log_step[h]) * step_scale; step_scale carries cross-rate rescaling.
ad::Tensor kernel_op(const ad::Tensor& A, const ad::Tensor& B, const ad::Tensor& C, const ad::Tensor& log_step,
                     std::size_t length, double step_scale = 1.0);

// u [B, H, L], kernel [H, K] with K >= L -> [B, H, L].
ad::Tensor convolve_op(const ad::Tensor& u, const ad::Tensor& kernel, ConvMethod method = ConvMethod::automatic);

}  // namespace s4ecg::ssm
