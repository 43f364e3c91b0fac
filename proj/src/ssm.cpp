#include "s4ecg/ssm.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace s4ecg::ssm {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex g_planner_mutex;

class RealFft {
public:
    explicit RealFft(std::size_t n) : m_n(n) {
        m_real = static_cast<double*>(fftw_malloc(sizeof(double) * n));
        m_spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
        std::lock_guard lock(g_planner_mutex);
        const int size = static_cast<int>(n);
        m_forward = fftw_plan_dft_r2c_1d(size, m_real, m_spec, FFTW_ESTIMATE);
        m_inverse = fftw_plan_dft_c2r_1d(size, m_spec, m_real, FFTW_ESTIMATE);
    }
    ~RealFft() {
        std::lock_guard lock(g_planner_mutex);
        fftw_destroy_plan(m_forward);
        fftw_destroy_plan(m_inverse);
        fftw_free(m_real);
        fftw_free(m_spec);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    std::size_t bins() const { return m_n / 2 + 1; }

    // Zero-padded forward transform of `x` into `spectrum`.
    void forward(std::span<const double> x, std::vector<std::complex<double>>& spectrum) {
        std::fill(m_real, m_real + m_n, 0.0);
        std::copy(x.begin(), x.end(), m_real);
        fftw_execute(m_forward);
        spectrum.resize(bins());
        for (std::size_t i = 0; i < bins(); ++i) spectrum[i] = {m_spec[i][0], m_spec[i][1]};
    }

    // Writes the first out.size() samples of the normalized inverse transform.
    void inverse(const std::vector<std::complex<double>>& spectrum, std::span<double> out) {
        for (std::size_t i = 0; i < bins(); ++i) {
            m_spec[i][0] = spectrum[i].real();
            m_spec[i][1] = spectrum[i].imag();
        }
        fftw_execute(m_inverse);
        const double inv = 1.0 / static_cast<double>(m_n);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = m_real[i] * inv;
    }

private:
    std::size_t m_n;
    double* m_real = nullptr;
    fftw_complex* m_spec = nullptr;
    fftw_plan m_forward = nullptr;
    fftw_plan m_inverse = nullptr;
};

// Plain complex product; std::complex operator* adds C99 NaN recovery.
std::complex<double> mul(std::complex<double> a, std::complex<double> b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

RealFft& fft_for(std::size_t len) {
    std::size_t n = 1;
    while (n < 2 * len) n <<= 1;
    thread_local std::map<std::size_t, std::unique_ptr<RealFft>> cache;
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealFft>(n);
    return *slot;
}

bool use_fft(ConvMethod method, std::size_t len) {
    return method == ConvMethod::fft || (method == ConvMethod::automatic && len >= kFftThreshold);
}

// Gradients of the batched causal convolution with respect to u and kernel.
void convolve_backward(std::span<const double> grad_y, std::span<const double> u, std::span<const double> kernel,
                       double* grad_u, double* grad_k, std::size_t batch, std::size_t channels, std::size_t len,
                       std::size_t kernel_len, ConvMethod method) {
    if (use_fft(method, len)) {
        RealFft& fft = fft_for(len);
        std::vector<std::complex<double>> kspec, gspec, uspec, acc, work;
        std::vector<double> buffer(len);
        for (std::size_t h = 0; h < channels; ++h) {
            fft.forward(kernel.subspan(h * kernel_len, len), kspec);
            acc.assign(fft.bins(), {0.0, 0.0});
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t off = (b * channels + h) * len;
                fft.forward(grad_y.subspan(off, len), gspec);
                if (grad_u) {
                    work.resize(fft.bins());
                    for (std::size_t i = 0; i < work.size(); ++i) work[i] = mul(gspec[i], std::conj(kspec[i]));
                    fft.inverse(work, buffer);
                    for (std::size_t t = 0; t < len; ++t) grad_u[off + t] += buffer[t];
                }
                if (grad_k) {
                    fft.forward(u.subspan(off, len), uspec);
                    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += mul(gspec[i], std::conj(uspec[i]));
                }
            }
            if (grad_k) {
                fft.inverse(acc, buffer);
                for (std::size_t s = 0; s < len; ++s) grad_k[h * kernel_len + s] += buffer[s];
            }
        }
        return;
    }
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < channels; ++h) {
            const std::size_t off = (b * channels + h) * len;
            const double* g = &grad_y[off];
            const double* x = &u[off];
            const double* k = &kernel[h * kernel_len];
            for (std::size_t s = 0; s < len; ++s) {
                const double ks = k[s];
                double acc = 0.0;
                const std::size_t span = len - s;
                for (std::size_t j = 0; j < span; ++j) {
                    if (grad_u) grad_u[off + j] += ks * g[j + s];
                    acc += g[j + s] * x[j];
                }
                if (grad_k) grad_k[h * kernel_len + s] += acc;
            }
        }
}

}  // namespace

double ContinuousSsm::step() const { return std::exp(log_step); }

Matrix hippo_legs(std::size_t n) {
    if (n == 0) throw std::invalid_argument("HiPPO state dimension must be >= 1");
    Matrix a = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                -std::sqrt(2.0 * static_cast<double>(i) + 1.0) * std::sqrt(2.0 * static_cast<double>(k) + 1.0);
        }
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = -(static_cast<double>(i) + 1.0);
    }
    return a;
}

Vector hippo_legs_input(std::size_t n) {
    if (n == 0) throw std::invalid_argument("HiPPO state dimension must be >= 1");
    Vector b(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) b(static_cast<Eigen::Index>(i)) = std::sqrt(2.0 * static_cast<double>(i) + 1.0);
    return b;
}

DiscreteSsm discretize_bilinear(const ContinuousSsm& ssm, double step) {
    if (!(step > 0.0) || !std::isfinite(step)) {
        throw DiscretizationError("step size must be positive and finite, got " + std::to_string(step));
    }
    const auto n = ssm.A.rows();
    if (ssm.A.cols() != n || ssm.B.size() != n || ssm.C.size() != n) {
        throw DiscretizationError("inconsistent state-space dimensions");
    }
    const Matrix identity = Matrix::Identity(n, n);
    const Matrix backward = identity - 0.5 * step * ssm.A;
    const Matrix forward = identity + 0.5 * step * ssm.A;
    Eigen::FullPivLU<Matrix> lu(backward);
    if (!lu.isInvertible()) throw DiscretizationError("(I - step/2 A) is singular");
    DiscreteSsm out;
    out.Abar = lu.solve(forward);
    out.Bbar = lu.solve(step * ssm.B);
    out.Cbar = ssm.C;
    out.step = step;
    return out;
}

KernelCache materialize_kernel(const DiscreteSsm& dssm, std::size_t length) {
    if (length == 0) throw std::invalid_argument("kernel length must be >= 1");
    KernelCache cache;
    cache.step = dssm.step;
    cache.values.resize(length);
    Vector v = dssm.Bbar;
    for (std::size_t t = 0; t < length; ++t) {
        cache.values[t] = dssm.Cbar.dot(v);
        v = dssm.Abar * v;
    }
    return cache;
}

std::vector<double> apply_convolution(const KernelCache& kernel, std::span<const double> u, double D,
                                      ConvMethod method) {
    if (kernel.length() < u.size()) {
        throw std::invalid_argument("kernel of length " + std::to_string(kernel.length()) +
                                    " is shorter than the signal (" + std::to_string(u.size()) + ")");
    }
    std::vector<double> y(u.size(), 0.0);
    if (u.empty()) return y;
    causal_convolve(u, kernel.values, y, 1, 1, u.size(), kernel.length(), method);
    for (std::size_t t = 0; t < u.size(); ++t) y[t] += D * u[t];
    return y;
}

std::vector<double> apply_recurrent(const DiscreteSsm& dssm, std::span<const double> u, double D,
                                    const std::optional<Vector>& x0) {
    const auto n = dssm.Abar.rows();
    Vector x = Vector::Zero(n);
    if (x0) {
        if (x0->size() != n) {
            throw std::invalid_argument("initial state has dimension " + std::to_string(x0->size()) + ", expected " +
                                        std::to_string(n));
        }
        x = *x0;
    }
    std::vector<double> y(u.size());
    for (std::size_t t = 0; t < u.size(); ++t) {
        x = dssm.Abar * x + dssm.Bbar * u[t];
        y[t] = dssm.Cbar.dot(x) + D * u[t];
    }
    return y;
}

double rescale_step(double model_step, double train_rate, double test_rate) {
    if (!(train_rate > 0.0) || !(test_rate > 0.0)) {
        throw std::invalid_argument("sampling rates must be positive");
    }
    return model_step * train_rate / test_rate;
}

double spectral_radius(const Matrix& m) { return m.eigenvalues().cwiseAbs().maxCoeff(); }

void causal_convolve(std::span<const double> u, std::span<const double> kernel, std::span<double> y,
                     std::size_t batch, std::size_t channels, std::size_t len, std::size_t kernel_len,
                     ConvMethod method) {
    if (kernel_len < len) throw std::invalid_argument("kernel shorter than signal");
    if (use_fft(method, len)) {
        RealFft& fft = fft_for(len);
        std::vector<std::complex<double>> kspec, uspec;
        for (std::size_t h = 0; h < channels; ++h) {
            fft.forward(kernel.subspan(h * kernel_len, len), kspec);
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t off = (b * channels + h) * len;
                fft.forward(u.subspan(off, len), uspec);
                for (std::size_t i = 0; i < uspec.size(); ++i) uspec[i] = mul(uspec[i], kspec[i]);
                fft.inverse(uspec, y.subspan(off, len));
            }
        }
        return;
    }
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < channels; ++h) {
            const std::size_t off = (b * channels + h) * len;
            double* out = &y[off];
            const double* x = &u[off];
            const double* k = &kernel[h * kernel_len];
            std::fill(out, out + len, 0.0);
            for (std::size_t s = 0; s < len; ++s) {
                const double ks = k[s];
                const std::size_t span = len - s;
                for (std::size_t j = 0; j < span; ++j) out[j + s] += ks * x[j];
            }
        }
}

namespace {

struct ChannelTrace {
    double step = 0.0;
    Matrix Abar, P, Minv;
    Matrix states;  // N x L, column t = Ā^t B̄
};

}  // namespace

ad::Tensor kernel_op(const ad::Tensor& A, const ad::Tensor& B, const ad::Tensor& C, const ad::Tensor& log_step,
                     std::size_t length, double step_scale) {
    if (A.rank() != 3 || A.dim(1) != A.dim(2)) throw ad::DimensionError("kernel_op: A must be [H, N, N]");
    const std::size_t channels = A.dim(0), n = A.dim(1);
    if (B.shape() != ad::Shape{channels, n} || C.shape() != ad::Shape{channels, n} ||
        log_step.shape() != ad::Shape{channels}) {
        throw ad::DimensionError("kernel_op: B, C must be [H, N] and log_step [H]");
    }
    if (length == 0) throw std::invalid_argument("kernel length must be >= 1");
    if (!(step_scale > 0.0)) throw std::invalid_argument("step scale must be positive");
    const auto N = static_cast<Eigen::Index>(n);
    const auto L = static_cast<Eigen::Index>(length);
    auto traces = std::make_shared<std::vector<ChannelTrace>>(channels);
    std::vector<double> out(channels * length);
    const Matrix identity = Matrix::Identity(N, N);
    for (std::size_t h = 0; h < channels; ++h) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
            A.values().data() + h * n * n, N, N);
        Eigen::Map<const Vector> b(B.values().data() + h * n, N);
        Eigen::Map<const Vector> c(C.values().data() + h * n, N);
        ChannelTrace& tr = (*traces)[h];
        tr.step = std::exp(log_step[h]) * step_scale;
        const Matrix M = identity - 0.5 * tr.step * a;
        tr.P = identity + 0.5 * tr.step * a;
        Eigen::PartialPivLU<Matrix> lu(M);
        tr.Minv = lu.inverse();
        if (!tr.Minv.allFinite()) throw DiscretizationError("(I - step/2 A) is singular in channel " + std::to_string(h));
        tr.Abar = tr.Minv * tr.P;
        tr.states.resize(N, L);
        tr.states.col(0) = tr.Minv * (tr.step * b);
        for (Eigen::Index t = 1; t < L; ++t) tr.states.col(t).noalias() = tr.Abar * tr.states.col(t - 1);
        Eigen::Map<Vector> k(out.data() + h * length, L);
        k.noalias() = tr.states.transpose() * c;
    }
    return ad::make_result(
        {channels, length}, std::move(out), {A, B, C, log_step}, "ssm_kernel",
        [traces, channels, n, length](ad::Node& self) {
            const auto N = static_cast<Eigen::Index>(n);
            const auto L = static_cast<Eigen::Index>(length);
            ad::Node& nA = *self.inputs[0];
            ad::Node& nB = *self.inputs[1];
            ad::Node& nC = *self.inputs[2];
            ad::Node& nS = *self.inputs[3];
            for (ad::Node* node : {&nA, &nB, &nC, &nS})
                if (node->requires_grad) ad::ensure_grad(*node);
            for (std::size_t h = 0; h < channels; ++h) {
                const ChannelTrace& tr = (*traces)[h];
                Eigen::Map<const Vector> g(self.grad.data() + h * length, L);
                Eigen::Map<const Vector> c(nC.value.data() + h * n, N);
                if (nC.requires_grad) {
                    Eigen::Map<Vector> dc(nC.grad.data() + h * n, N);
                    dc.noalias() += tr.states * g;
                }
                if (!(nA.requires_grad || nB.requires_grad || nS.requires_grad)) continue;
                // Adjoint of v_{t+1} = Ā v_t, k_t = c·v_t.
                Matrix lambda(N, L);
                lambda.col(L - 1) = g(L - 1) * c;
                for (Eigen::Index t = L - 1; t-- > 0;) {
                    lambda.col(t).noalias() = g(t) * c + tr.Abar.transpose() * lambda.col(t + 1);
                }
                Matrix dAbar = Matrix::Zero(N, N);
                if (L > 1) dAbar.noalias() = lambda.rightCols(L - 1) * tr.states.leftCols(L - 1).transpose();
                const Vector dBbar = lambda.col(0);
                Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
                    nA.value.data() + h * n * n, N, N);
                Eigen::Map<const Vector> b(nB.value.data() + h * n, N);
                // Ā = M⁻¹P, B̄ = M⁻¹(ΔB) with M = I - Δ/2 A, P = I + Δ/2 A.
                const Vector scaled_b = tr.step * b;
                const Matrix dMinv = dAbar * tr.P.transpose() + dBbar * scaled_b.transpose();
                const Matrix dP = tr.Minv.transpose() * dAbar;
                const Vector dScaledB = tr.Minv.transpose() * dBbar;
                const Matrix dM = -tr.Minv.transpose() * dMinv * tr.Minv.transpose();
                if (nA.requires_grad) {
                    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> da(
                        nA.grad.data() + h * n * n, N, N);
                    da += 0.5 * tr.step * (dP - dM);
                }
                if (nB.requires_grad) {
                    Eigen::Map<Vector> db(nB.grad.data() + h * n, N);
                    db += tr.step * dScaledB;
                }
                if (nS.requires_grad) {
                    const double dstep = 0.5 * (dP.cwiseProduct(a).sum() - dM.cwiseProduct(a).sum()) + dScaledB.dot(b);
                    nS.grad[h] += tr.step * dstep;
                }
            }
        });
}

ad::Tensor convolve_op(const ad::Tensor& u, const ad::Tensor& kernel, ConvMethod method) {
    if (u.rank() != 3 || kernel.rank() != 2 || kernel.dim(0) != u.dim(1)) {
        throw ad::DimensionError("convolve_op: signal " + ad::to_string(u.shape()) + ", kernel " +
                                 ad::to_string(kernel.shape()));
    }
    const std::size_t batch = u.dim(0), channels = u.dim(1), len = u.dim(2), klen = kernel.dim(1);
    if (klen < len) {
        throw std::invalid_argument("kernel of length " + std::to_string(klen) + " is shorter than the signal (" +
                                    std::to_string(len) + ")");
    }
    std::vector<double> out(u.size());
    causal_convolve(u.values(), kernel.values(), out, batch, channels, len, klen, method);
    return ad::make_result(u.shape(), std::move(out), {u, kernel}, "ssm_convolve",
                           [batch, channels, len, klen, method](ad::Node& self) {
                               ad::Node& nu = *self.inputs[0];
                               ad::Node& nk = *self.inputs[1];
                               if (nu.requires_grad) ad::ensure_grad(nu);
                               if (nk.requires_grad) ad::ensure_grad(nk);
                               convolve_backward(self.grad, nu.value, nk.value, nu.requires_grad ? nu.grad.data() : nullptr,
                                                 nk.requires_grad ? nk.grad.data() : nullptr, batch, channels, len, klen,
                                                 method);
                           });
}

}  // namespace s4ecg::ssm
