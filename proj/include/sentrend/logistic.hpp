#pragma once

#include <Eigen/Dense>

namespace sentrend {

struct IrlsOptions
{
    int max_iterations = 100;
    double coefficient_tolerance = 1e-10;  // max |delta beta|
    double deviance_tolerance = 1e-12;     // relative deviance change
    double separation_bound = 1e3;         // max |beta| treated as divergence
};

struct IrlsResult
{
    Eigen::VectorXd coefficients;
    double deviance = 0.0;
    int iterations = 0;
    bool converged = false;
    bool separated = false;
};

/// Binary-response deviance -2 * sum[y*eta - log(1 + e^eta)], evaluated stably.
double logistic_deviance(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& beta);

/// Logistic maximum likelihood by iteratively reweighted least squares
/// (Newton steps with step halving when the deviance would rise).
/// Throws ValidationError when x is rank deficient or y is not binary.
IrlsResult fit_logistic_irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const IrlsOptions& options = {});

} // namespace sentrend
