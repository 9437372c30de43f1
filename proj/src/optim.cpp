#include "sentrend/optim.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace sentrend {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kCurvature = 0.9;

struct Pair
{
    Eigen::VectorXd s;
    Eigen::VectorXd y;
    double rho;
};

} // namespace

LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& options)
{
    const auto n = x0.size();
    const bool bounded = options.lower_bounds.has_value();
    if (bounded && options.lower_bounds->size() != n)
        throw std::invalid_argument("lower bound dimension mismatch");

    auto project = [&](Eigen::VectorXd& x) {
        if (bounded)
            x = x.cwiseMax(*options.lower_bounds);
    };
    // Coordinates pinned at a bound with the gradient pushing outward.
    auto active = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
        Eigen::Array<bool, Eigen::Dynamic, 1> a = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, false);
        if (bounded)
            for (Eigen::Index i = 0; i < n; ++i)
                a[i] = x[i] <= (*options.lower_bounds)[i] && g[i] > 0.0;
        return a;
    };

    LbfgsResult r;
    project(x0);
    r.x = std::move(x0);
    r.gradient = Eigen::VectorXd::Zero(n);
    r.value = f(r.x, r.gradient);
    r.evaluations = 1;
    if (!std::isfinite(r.value) || !r.gradient.allFinite())
        throw std::runtime_error("objective is not finite at the starting point");
    r.history.push_back(r.value);

    std::deque<Pair> memory;
    Eigen::VectorXd g_new(n);
    double last_change = std::numeric_limits<double>::infinity();

    for (r.iterations = 0; r.iterations < options.max_iterations;) {
        auto act = active(r.x, r.gradient);
        Eigen::VectorXd pg = r.gradient;
        for (Eigen::Index i = 0; i < n; ++i)
            if (act[i])
                pg[i] = 0.0;

        const double gnorm = pg.lpNorm<Eigen::Infinity>();
        const bool grad_ok = gnorm < options.gradient_tolerance;
        const bool change_ok = last_change < options.relative_tolerance;
        if (options.require_both ? (grad_ok && change_ok) : (grad_ok || change_ok)) {
            r.converged = true;
            r.status = "converged";
            return r;
        }
        if (gnorm == 0.0) {
            r.converged = true;
            r.status = "zero gradient";
            return r;
        }

        // Two-loop recursion on the free coordinates.
        Eigen::VectorXd q = pg;
        std::vector<double> alpha(memory.size());
        for (std::size_t k = memory.size(); k-- > 0;) {
            alpha[k] = memory[k].rho * memory[k].s.dot(q);
            q -= alpha[k] * memory[k].y;
        }
        double t = 1.0;
        if (!memory.empty()) {
            const auto& last = memory.back();
            q *= last.s.dot(last.y) / last.y.squaredNorm();
        } else {
            t = r.iterations == 0 ? options.first_step : std::min(1.0, 1.0 / pg.norm());
        }
        for (std::size_t k = 0; k < memory.size(); ++k) {
            const double beta = memory[k].rho * memory[k].y.dot(q);
            q += (alpha[k] - beta) * memory[k].s;
        }
        Eigen::VectorXd d = -q;
        for (Eigen::Index i = 0; i < n; ++i)
            if (act[i])
                d[i] = 0.0;
        if (pg.dot(d) >= 0.0) {
            memory.clear();
            d = -pg;
            t = std::min(1.0, 1.0 / pg.norm());
        }

        bool accepted = false;
        Eigen::VectorXd x_new;
        double f_new = 0.0;
        for (int b = 0; b < options.max_backtracks; ++b, t *= 0.5) {
            x_new = r.x + t * d;
            project(x_new);
            const Eigen::VectorXd step = x_new - r.x;
            if (step.lpNorm<Eigen::Infinity>() == 0.0)
                break;
            f_new = f(x_new, g_new);
            ++r.evaluations;
            if (!std::isfinite(f_new) || !g_new.allFinite())
                continue;
            if (f_new <= r.value + kArmijo * r.gradient.dot(step) && f_new < r.value) {
                accepted = true;
                break;
            }
            const double slope0 = r.gradient.dot(step);
            const double slope1 = g_new.dot(step);
            if (options.noise_tolerance > 0.0 && f_new <= r.value + options.noise_tolerance * std::abs(r.value)
                && slope1 >= kCurvature * slope0 && slope1 <= (2.0 * kArmijo - 1.0) * slope0) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!memory.empty()) {
                memory.clear();
                continue;
            }
            r.converged = grad_ok;
            r.status = "line search made no progress";
            return r;
        }

        ++r.iterations;
        Eigen::VectorXd s = x_new - r.x;
        Eigen::VectorXd y = g_new - r.gradient;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            memory.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (static_cast<int>(memory.size()) > options.memory)
                memory.pop_front();
        }
        last_change = std::abs(r.value - f_new) / std::max(1.0, std::abs(f_new));
        r.x = std::move(x_new);
        r.value = f_new;
        r.gradient = g_new;
        r.history.push_back(r.value);
    }
    r.status = "iteration limit";
    return r;
}

} // namespace sentrend
