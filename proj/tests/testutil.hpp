#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "dpig/models.hpp"
#include "dpig/tape.hpp"

namespace testutil {

using namespace dpig;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

// Central finite differences of eval() against analytic d(eval)/d(target).
// eval must rebuild its graph from the current tensor values on each call.
struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    int64_t kink_retries = 0;
};

inline GradCheckResult check_grad_fd(Tensor& target, const std::vector<double>& analytic,
                                     const std::function<double()>& eval, double h = 1e-5) {
    GradCheckResult res;
    for (size_t i = 0; i < target.data.size(); ++i) {
        const double saved = target.data[i];
        auto fd_at = [&](double step) {
            target.data[i] = saved + step;
            const double up = eval();
            target.data[i] = saved - step;
            const double down = eval();
            target.data[i] = saved;
            return (up - down) / (2.0 * step);
        };
        double err = rel_err(analytic[i], fd_at(h));
        if (err >= 1e-4) {
            // the +-h interval may straddle a relu/clamp kink where the
            // difference quotient is meaningless; a genuine backward bug
            // also fails at the smaller step, a kink artifact vanishes
            err = rel_err(analytic[i], fd_at(h * 1e-2));
            res.kink_retries += 1;
        }
        res.max_rel_err = std::max(res.max_rel_err, err);
        res.checked += 1;
    }
    return res;
}

inline LatentSpec tiny_latent() {
    LatentSpec spec;
    spec.noise_dim = 6;
    spec.discrete_codes = {3};
    spec.continuous_codes = 2;
    spec.continuous_prior = LatentSpec::Prior::uniform;
    return spec;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
    }
    return true;
}

inline bool params_bitwise_equal(const ParamSet& a, const ParamSet& b) {
    if (a.names() != b.names()) return false;
    for (const auto& name : a.names()) {
        if (!bitwise_equal(a.at(name).data, b.at(name).data)) return false;
    }
    return true;
}

}  // namespace testutil
