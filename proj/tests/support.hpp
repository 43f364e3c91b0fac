#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "s4ecg/random.hpp"
#include "s4ecg/tensor.hpp"

namespace s4ecg::testing {

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> values(ad::numel(shape));
    for (double& v : values) v = dist(rng);
    return ad::Tensor::from(std::move(shape), std::move(values), requires_grad);
}

// Reduces any output to a scalar with fixed random weights so every output
// entry contributes to the checked gradient.
inline ad::Tensor project(const ad::Tensor& out, Rng& rng) {
    const ad::Tensor weights = random_tensor(out.shape(), rng, false);
    return ad::sum(out * weights);
}

// Largest norm-wise relative error |analytic - numeric| / max(|analytic|, |numeric|)
// over all parameters (denominator floored at 1e-6); central differences with step h.
inline double gradcheck(std::vector<ad::Tensor> params, const std::function<ad::Tensor()>& loss_fn,
                        double h = 1e-5) {
    for (auto& p : params) p.zero_grad();
    ad::backward(loss_fn());
    double worst = 0.0;
    for (auto& p : params) {
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        if (analytic.empty()) analytic.assign(p.size(), 0.0);
        std::vector<double> numeric(p.size());
        auto values = p.mutable_values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            double up;
            double down;
            {
                ad::NoGradGuard guard;
                up = loss_fn().item();
                values[i] = saved - h;
                down = loss_fn().item();
            }
            values[i] = saved;
            numeric[i] = (up - down) / (2.0 * h);
        }
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            na += analytic[i] * analytic[i];
            nn += numeric[i] * numeric[i];
        }
        // Absolute floor for parameters whose true gradient vanishes (bias before batch norm).
        const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
        worst = std::max(worst, std::sqrt(diff) / denom);
    }
    return worst;
}

}  // namespace s4ecg::testing
