#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace stq {

inline void require_tau(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw std::domain_error("quantile level must be in (0,1)");
}

// Check (pinball) loss rho_tau(v) = v * (tau - 1{v<0}).
inline double check_loss(double v, double tau) {
    require_tau(tau);
    return v * (tau - (v < 0.0 ? 1.0 : 0.0));
}

// Subgradient of the check loss; the kink at v=0 takes value tau - 0.5.
inline double check_loss_grad(double v, double tau) {
    require_tau(tau);
    if (v > 0.0) return tau;
    if (v < 0.0) return tau - 1.0;
    return tau - 0.5;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Non-crossing output transform. The median head passes through; upper and
// lower quantile heads are squashed into one-sided bands around f_constant.
inline double psi(double tau, double x, double f_constant, double lambda) {
    require_tau(tau);
    if (lambda <= 0.0) throw std::domain_error("psi: lambda must be positive");
    if (tau == 0.5) return x;
    if (tau > 0.5) return f_constant + lambda * (tau - 0.5) * sigmoid(x);
    return f_constant - lambda * (0.5 - tau) * sigmoid(x);
}

// d psi / d x, needed for backprop through the output transform.
inline double psi_grad(double tau, double x, double lambda) {
    require_tau(tau);
    if (tau == 0.5) return 1.0;
    const double s = sigmoid(x);
    const double scale = tau > 0.5 ? lambda * (tau - 0.5) : -lambda * (0.5 - tau);
    return scale * s * (1.0 - s);
}

// Mean check loss over (target - prediction) residuals; minimized when the
// predictions sit at the tau-quantile of the targets.
inline double empirical_risk(const std::vector<double>& predictions,
                             const std::vector<double>& targets, double tau) {
    if (predictions.empty() || predictions.size() != targets.size())
        throw std::domain_error("empirical_risk: inputs must be nonempty and equal length");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        s += check_loss(targets[i] - predictions[i], tau);
    return s / static_cast<double>(predictions.size());
}

}  // namespace stq
