#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>

namespace sentrend {

/// Returns f(x) and writes the gradient into `grad` (already sized).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions
{
    int max_iterations = 500;
    int memory = 10;
    /// Converged when the max-norm of the projected gradient falls below this.
    double gradient_tolerance = 1e-6;
    /// Converged when |f_k - f_{k-1}| / max(1, |f_k|) falls below this.
    double relative_tolerance = 1e-10;
    /// When true both criteria must hold; otherwise either suffices.
    bool require_both = true;
    /// Step length tried first on the very first (steepest-descent) iteration.
    double first_step = 1.0;
    int max_backtracks = 60;
    /// When positive, a step whose value rises by at most
    /// noise_tolerance * |f| is still accepted if it meets the approximate
    /// Wolfe slope conditions.
    double noise_tolerance = 0.0;
    /// Optional per-coordinate lower bounds, handled by projection.
    std::optional<Eigen::VectorXd> lower_bounds;
};

struct LbfgsResult
{
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd gradient;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string status;
    /// Objective value after each accepted iteration (non-increasing).
    std::vector<double> history;
};

/// Limited-memory BFGS with Armijo backtracking. With noise_tolerance = 0
/// every accepted step strictly decreases f, so the history is monotone.
LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& options = {});

} // namespace sentrend
