#include "sentrend/logistic.hpp"

#include "sentrend/io.hpp"

#include <cmath>

namespace sentrend {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// log(1 + e^eta) without overflow.
double softplus(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double sigmoid(double eta)
{
    if (eta >= 0.0)
        return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

} // namespace

double logistic_deviance(const MatrixXd& x, const VectorXd& y, const VectorXd& beta)
{
    const VectorXd eta = x * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        ll += y[i] * eta[i] - softplus(eta[i]);
    return -2.0 * ll;
}

IrlsResult fit_logistic_irls(const MatrixXd& x, const VectorXd& y, const IrlsOptions& options)
{
    if (x.rows() != y.size())
        throw ValidationError("design and response lengths differ");
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y[i] != 0.0 && y[i] != 1.0)
            throw ValidationError("logistic response must be 0/1");
    Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
    if (qr.rank() < x.cols())
        throw ValidationError("logistic design is rank deficient (collinear features)");

    IrlsResult r;
    r.coefficients = VectorXd::Zero(x.cols());
    r.deviance = logistic_deviance(x, y, r.coefficients);
    for (r.iterations = 0; r.iterations < options.max_iterations;) {
        const VectorXd eta = x * r.coefficients;
        VectorXd mu(eta.size()), w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            mu[i] = sigmoid(eta[i]);
            w[i] = mu[i] * (1.0 - mu[i]);
        }
        const MatrixXd info = x.transpose() * w.asDiagonal() * x;
        const VectorXd score = x.transpose() * (y - mu);
        VectorXd step = info.ldlt().solve(score);
        if (!step.allFinite())
            step = info.completeOrthogonalDecomposition().solve(score);

        double dev = logistic_deviance(x, y, r.coefficients + step);
        for (int halvings = 0; !(dev <= r.deviance) && halvings < 30; ++halvings) {
            step *= 0.5;
            dev = logistic_deviance(x, y, r.coefficients + step);
        }
        ++r.iterations;
        const double change = r.deviance - dev;
        const bool improving = change > 0.0;
        if (dev <= r.deviance)
            r.coefficients += step;
        const double prev = r.deviance;
        r.deviance = std::min(dev, r.deviance);

        // A deviance near zero means the classes are perfectly separated.
        if ((r.coefficients.lpNorm<Eigen::Infinity>() > options.separation_bound && improving) || r.deviance < 1e-8) {
            r.separated = true;
            return r;
        }
        if (step.lpNorm<Eigen::Infinity>() < options.coefficient_tolerance
            || std::abs(change) <= options.deviance_tolerance * std::max(prev, 1e-300)) {
            r.converged = true;
            return r;
        }
    }
    // Still moving after the budget: the likelihood has no finite maximizer.
    r.separated = true;
    return r;
}

} // namespace sentrend
