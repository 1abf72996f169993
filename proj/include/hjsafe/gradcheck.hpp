#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hjsafe/nn.hpp"

namespace hjsafe::nn {

struct GradCheckLayer {
    int layer = -1;
    double max_rel_err = 0.0;
    size_t worst_index = 0;  // flat index within the layer (W entries, then b)
};

struct GradCheckReport {
    std::vector<GradCheckLayer> per_layer;
    double max_rel_err = 0.0;
    int worst_layer = -1;
    bool pass = false;
    double tolerance = 0.0;

    std::string summary() const {
        std::string s = pass ? "gradcheck PASS" : "gradcheck FAIL";
        s += " (max rel err " + std::to_string(max_rel_err) + " at layer " +
             std::to_string(worst_layer) + ", tol " + std::to_string(tolerance) + ")";
        return s;
    }
};

// Central finite differences over every parameter. `loss` must return the
// scalar loss and its analytic gradient bundle for the given net. Intended
// for the double instantiation of a loss; f32 rounding drowns an h=1e-4
// difference quotient.
template <class T, class LossFn>
GradCheckReport finite_diff_check(Net<T>& net, LossFn&& loss, double tolerance, double h = 1e-4) {
    if (net.param_count() > 10000)
        throw Error("finite_diff_check: net too large for exhaustive perturbation (" +
                    std::to_string(net.param_count()) + " params)");
    constexpr double kFloor = 1e-6;  // both-tiny gradients compare as equal

    const auto [base_loss, analytic] = loss(static_cast<const Net<T>&>(net));
    (void)base_loss;

    GradCheckReport report;
    report.tolerance = tolerance;
    for (size_t li = 0; li < net.layers.size(); ++li) {
        auto& l = net.layers[li];
        if (!l.has_params()) continue;
        GradCheckLayer lr;
        lr.layer = static_cast<int>(li);
        auto check_param = [&](T& pref, double a, size_t flat) {
            const T saved = pref;
            pref = static_cast<T>(static_cast<double>(saved) + h);
            const double lp = static_cast<double>(loss(static_cast<const Net<T>&>(net)).first);
            pref = static_cast<T>(static_cast<double>(saved) - h);
            const double lm = static_cast<double>(loss(static_cast<const Net<T>&>(net)).first);
            pref = saved;
            const double num = (lp - lm) / (2.0 * h);
            const double denom = std::max({std::abs(a), std::abs(num), kFloor});
            const double rel = std::abs(a - num) / denom;
            if (std::max(std::abs(a), std::abs(num)) < kFloor) return;  // both ~zero
            if (rel > lr.max_rel_err) {
                lr.max_rel_err = rel;
                lr.worst_index = flat;
            }
        };
        for (size_t j = 0; j < l.W.numel(); ++j)
            check_param(l.W[j], static_cast<double>(analytic.dW[li][j]), j);
        for (size_t j = 0; j < l.b.numel(); ++j)
            check_param(l.b[j], static_cast<double>(analytic.db[li][j]), l.W.numel() + j);
        report.per_layer.push_back(lr);
        if (lr.max_rel_err > report.max_rel_err) {
            report.max_rel_err = lr.max_rel_err;
            report.worst_layer = lr.layer;
        }
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace hjsafe::nn
