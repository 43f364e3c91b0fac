#include <doctest.h>

#include <cmath>

#include "s4ecg/ssm.hpp"
#include "support.hpp"

using namespace s4ecg;
using namespace s4ecg::ssm;

namespace {

ContinuousSsm random_stable(std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    ContinuousSsm s;
    s.A = hippo_legs(n);
    s.B = hippo_legs_input(n);
    s.C = Vector(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < s.C.size(); ++i) s.C(i) = normal(rng);
    s.D = normal(rng);
    return s;
}

DiscreteSsm random_discrete(std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> log_step(std::log(1e-3), std::log(1e-1));
    return discretize_bilinear(random_stable(n, rng), std::exp(log_step(rng)));
}

std::vector<double> random_signal(std::size_t len, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> u(len);
    for (double& v : u) v = normal(rng);
    return u;
}

}  // namespace

TEST_CASE("hippo legs closed form") {
    CHECK(hippo_legs(1)(0, 0) == -1.0);
    const Matrix a2 = hippo_legs(2);
    CHECK(a2(0, 0) == -1.0);
    CHECK(a2(0, 1) == 0.0);
    CHECK(a2(1, 0) == doctest::Approx(-std::sqrt(3.0)));
    CHECK(a2(1, 1) == -2.0);
    const Matrix a8 = hippo_legs(8);
    for (int n = 0; n < 8; ++n)
        for (int k = n + 1; k < 8; ++k) CHECK(a8(n, k) == 0.0);
    CHECK_THROWS(hippo_legs(0));
}

TEST_CASE("bilinear discretization") {
    ContinuousSsm zero{Matrix::Zero(1, 1), Vector::Ones(1), Vector::Ones(1), 0.0, 0.0};
    const DiscreteSsm d0 = discretize_bilinear(zero, 0.1);
    CHECK(d0.Abar(0, 0) == doctest::Approx(1.0));
    CHECK(d0.Bbar(0) == doctest::Approx(0.1));

    ContinuousSsm scalar{Matrix::Constant(1, 1, -1.0), Vector::Ones(1), Vector::Ones(1), 0.0, 0.0};
    const DiscreteSsm d1 = discretize_bilinear(scalar, 1.0);
    CHECK(d1.Abar(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(d1.Bbar(0) == doctest::Approx(2.0 / 3.0));

    ContinuousSsm singular{Matrix::Constant(1, 1, 2.0), Vector::Ones(1), Vector::Ones(1), 0.0, 0.0};
    CHECK_THROWS_AS(discretize_bilinear(singular, 1.0), DiscretizationError);
    CHECK_THROWS(discretize_bilinear(scalar, 0.0));
}

TEST_CASE("bilinear step response tracks RK4 integration") {
    Rng rng = make_rng(5);
    std::normal_distribution<double> normal(0.0, 0.3);
    ContinuousSsm s;
    s.A = -1.5 * Matrix::Identity(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) s.A(i, j) += normal(rng);
    s.B = Vector::Ones(4);
    s.C = Vector(4);
    for (int i = 0; i < 4; ++i) s.C(i) = normal(rng) * 3.0;
    s.D = 0.0;
    const double step = 0.01;
    const std::size_t steps = 100;
    const DiscreteSsm d = discretize_bilinear(s, step);
    const std::vector<double> y = apply_recurrent(d, std::vector<double>(steps, 1.0), 0.0);

    // RK4 on x' = A x + B with h = step / 100.
    Vector x = Vector::Zero(4);
    const double h = step / 100.0;
    auto f = [&](const Vector& v) -> Vector { return s.A * v + s.B; };
    double worst = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
        for (int i = 0; i < 100; ++i) {
            const Vector k1 = f(x), k2 = f(x + 0.5 * h * k1), k3 = f(x + 0.5 * h * k2), k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        worst = std::max(worst, std::abs(s.C.dot(x) - y[t]));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("kernel materialization") {
    DiscreteSsm g{Matrix::Constant(1, 1, 0.5), Vector::Ones(1), Vector::Constant(1, 2.0), 1.0};
    CHECK(materialize_kernel(g, 3).values == std::vector<double>{2.0, 1.0, 0.5});

    DiscreteSsm ident{Matrix::Identity(3, 3), Vector::Constant(3, 0.5), Vector::Constant(3, 1.0), 1.0};
    for (double v : materialize_kernel(ident, 10).values) CHECK(v == doctest::Approx(1.5));

    Rng rng = make_rng(8);
    const DiscreteSsm d = random_discrete(8, rng);
    const KernelCache k = materialize_kernel(d, 64);
    for (std::size_t t = 0; t < 64; ++t) {
        Matrix power = Matrix::Identity(8, 8);
        for (std::size_t i = 0; i < t; ++i) power = power * d.Abar;
        CHECK(k.values[t] == doctest::Approx(d.Cbar.dot(power * d.Bbar)).epsilon(1e-10));
    }

    // Linearity in C.
    for (double alpha : {2.0, -0.5, 2.5}) {
        DiscreteSsm scaled = d;
        scaled.Cbar *= alpha;
        const KernelCache ks = materialize_kernel(scaled, 64);
        for (std::size_t t = 0; t < 64; ++t) {
            // Powers of two scale without rounding.
            if (alpha != 2.5) CHECK(ks.values[t] == alpha * k.values[t]);
            else CHECK(ks.values[t] == doctest::Approx(alpha * k.values[t]).epsilon(1e-14));
        }
    }
}

TEST_CASE("convolution paths") {
    Rng rng = make_rng(9);
    KernelCache kernel{0.1, random_signal(128, rng)};
    std::vector<double> impulse(128, 0.0);
    impulse[0] = 1.0;
    const auto y = apply_convolution(kernel, impulse, 0.0, ConvMethod::direct);
    for (std::size_t t = 0; t < 128; ++t) CHECK(y[t] == kernel.values[t]);

    const auto u = random_signal(128, rng);
    KernelCache zero{0.1, std::vector<double>(128, 0.0)};
    CHECK(apply_convolution(zero, u, 1.0) == u);

    const auto direct = apply_convolution(kernel, u, 0.3, ConvMethod::direct);
    const auto fft = apply_convolution(kernel, u, 0.3, ConvMethod::fft);
    for (std::size_t t = 0; t < 128; ++t) CHECK(std::abs(direct[t] - fft[t]) < 1e-8);

    KernelCache short_kernel{0.1, std::vector<double>(10, 0.0)};
    CHECK_THROWS(apply_convolution(short_kernel, u, 0.0));
}

TEST_CASE("recurrence") {
    Rng rng = make_rng(10);
    const DiscreteSsm d = random_discrete(8, rng);
    for (double v : apply_recurrent(d, std::vector<double>(20, 0.0), 0.7)) CHECK(v == 0.0);
    const std::vector<double> one = apply_recurrent(d, std::vector<double>{2.0}, 0.7);
    CHECK(one[0] == doctest::Approx(d.Cbar.dot(d.Bbar) * 2.0 + 1.4));
    CHECK_THROWS(apply_recurrent(d, std::vector<double>{1.0}, 0.0, Vector::Zero(3)));
}

TEST_CASE("convolution and recurrence agree on random systems") {
    Rng rng = make_rng(12);
    std::uniform_int_distribution<std::size_t> dim(1, 16);
    std::uniform_int_distribution<std::size_t> len(1, 512);
    for (int trial = 0; trial < 30; ++trial) {
        const DiscreteSsm d = random_discrete(dim(rng), rng);
        const auto u = random_signal(len(rng), rng);
        const auto conv = apply_convolution(materialize_kernel(d, u.size()), u, 0.5);
        const auto rec = apply_recurrent(d, u, 0.5);
        double worst = 0.0;
        for (std::size_t t = 0; t < u.size(); ++t) worst = std::max(worst, std::abs(conv[t] - rec[t]));
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("causality of the convolution") {
    Rng rng = make_rng(13);
    const DiscreteSsm d = random_discrete(4, rng);
    const KernelCache k = materialize_kernel(d, 700);
    auto u = random_signal(700, rng);
    const auto y1 = apply_convolution(k, u, 1.0);
    u[400] += 5.0;
    const auto y2 = apply_convolution(k, u, 1.0);
    for (std::size_t t = 0; t < 400; ++t) CHECK(std::abs(y1[t] - y2[t]) < 1e-12);
}

TEST_CASE("HiPPO bilinear stability across steps") {
    for (std::size_t n : {1, 4, 8, 16}) {
        ContinuousSsm s{hippo_legs(n), hippo_legs_input(n), Vector::Ones(static_cast<Eigen::Index>(n)), 0.0, 0.0};
        for (double step : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
            CHECK(spectral_radius(discretize_bilinear(s, step).Abar) <= 1.0 + 1e-6);
        }
    }
}

TEST_CASE("rescale step") {
    CHECK(rescale_step(0.01, 100, 500) == doctest::Approx(0.002));
    CHECK(rescale_step(0.01, 100, 100) == 0.01);
    CHECK_THROWS(rescale_step(0.01, 0, 100));
    CHECK_THROWS(rescale_step(0.01, 100, -1));
}

TEST_CASE("differentiable kernel and convolution") {
    Rng rng = make_rng(14);
    const std::size_t h = 3, n = 4, len = 12;
    std::vector<double> a;
    for (std::size_t c = 0; c < h; ++c) {
        const Matrix hippo = hippo_legs(n);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i)
            for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n); ++j) a.push_back(hippo(i, j));
    }
    ad::Tensor A = ad::Tensor::from({h, n, n}, a, true);
    ad::Tensor B = testing::random_tensor({h, n}, rng);
    ad::Tensor C = testing::random_tensor({h, n}, rng);
    ad::Tensor log_step = ad::Tensor::from({h}, {std::log(0.05), std::log(0.2), std::log(0.01)}, true);
    ad::Tensor u = testing::random_tensor({2, h, len}, rng);

    // Values agree with the eager path.
    const ad::Tensor kernel = kernel_op(A, B, C, log_step, len);
    for (std::size_t c = 0; c < h; ++c) {
        ContinuousSsm s;
        s.A = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.data() + c * n * n, 4, 4);
        s.B = Eigen::Map<const Vector>(B.values().data() + c * n, 4);
        s.C = Eigen::Map<const Vector>(C.values().data() + c * n, 4);
        const KernelCache k = materialize_kernel(discretize_bilinear(s, std::exp(log_step[c])), len);
        for (std::size_t t = 0; t < len; ++t) CHECK(kernel[c * len + t] == doctest::Approx(k.values[t]).epsilon(1e-12));
    }

    auto loss = [&](double scale, ConvMethod method) {
        return [&, scale, method] {
            Rng r = make_rng(15);
            return testing::project(convolve_op(u, kernel_op(A, B, C, log_step, len, scale), method), r);
        };
    };
    CHECK(testing::gradcheck({A, B, C, log_step, u}, loss(1.0, ConvMethod::direct)) < 1e-6);
    CHECK(testing::gradcheck({A, B, C, log_step, u}, loss(0.5, ConvMethod::fft)) < 1e-6);
    CHECK(testing::gradcheck({log_step}, loss(2.0, ConvMethod::direct)) < 1e-4);
}
