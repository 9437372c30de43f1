#pragma once

#include "sentrend/corpus.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sentrend {

// ─── Design ─────────────────────────────────────────────────────────────────

enum class ColumnKind { Intercept, Dummy, Numeric };

struct ColumnInfo
{
    std::string name;      // e.g. "region:South", "enrollment"
    std::string variable;  // e.g. "region"
    std::string level;     // dummy level, empty otherwise
    ColumnKind kind = ColumnKind::Numeric;
    std::string reference; // reference level of a dummy's variable
    double mean = 0.0;     // standardization constants (numeric columns)
    double sd = 1.0;
};

struct ClassifiedMessage
{
    std::string msg_id;
    std::string school_id;
    int year = 0;
    bool negative = false;
};

/// Reference level per categorical variable: region, type, year, d1, cchie,
/// medical. Defaults are Midwest, Public, 2019, No, BaccalaureateOrMasters, No.
using ReferenceLevels = std::map<std::string, std::string>;

ReferenceLevels default_reference_levels();

/// Binomial-aggregated logistic design. Each row carries a covariate
/// pattern, a cluster, a message count and a negative count; rows of one
/// cluster are contiguous. Aggregating identical patterns leaves the
/// Bernoulli likelihood unchanged.
struct GlmmDesign
{
    Eigen::MatrixXd x;            // rows x (p + 1); column 0 is the intercept
    Eigen::VectorXd successes;    // negatives
    Eigen::VectorXd trials;       // messages
    std::vector<int> cluster;     // per row, 0..K-1, non-decreasing
    std::vector<std::string> cluster_names;
    std::vector<ColumnInfo> columns;
    std::vector<std::string> dropped_schools;  // incomplete or missing covariates

    Eigen::Index cluster_count() const { return static_cast<Eigen::Index>(cluster_names.size()); }
    double message_count() const { return trials.sum(); }
    /// Row range [offsets[k], offsets[k+1]) of cluster k.
    std::vector<Eigen::Index> cluster_offsets() const;

    void validate() const;

    /// One row per observation (trials = 1). Rows are stably regrouped by
    /// cluster id.
    static GlmmDesign from_bernoulli(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const int> cluster,
                                     std::vector<ColumnInfo> columns = {});

    /// "GLMD1\n", uint32 LE header size, JSON header, zlib-compressed
    /// little-endian columns.
    std::string encode() const;
    static GlmmDesign decode(std::string_view bytes);
};

struct DesignOptions
{
    /// Drop dummy columns for levels that never occur among used schools.
    bool drop_empty_levels = true;
};

/// Dummy-codes categorical covariates against the reference levels and
/// standardizes numeric covariates by their across-school mean and sample
/// SD over the schools that enter the design. Messages from schools with
/// incomplete (or no) covariates are dropped.
GlmmDesign build_design(std::span<const ClassifiedMessage> messages, std::span<const SchoolCovariates> covariates,
                        const ReferenceLevels& reference = default_reference_levels(),
                        const DesignOptions& options = {});

// ─── Likelihood ─────────────────────────────────────────────────────────────

struct LaplaceEvaluation
{
    double loglik = 0.0;
    /// d loglik / d(beta, log sigma); the last entry is 0 when sigma == 0.
    Eigen::VectorXd gradient;
    std::vector<double> modes;
    std::vector<double> curvatures;  // -g''(mode)
    int max_inner_iterations = 0;
};

LaplaceEvaluation laplace_evaluate(const GlmmDesign& design, const Eigen::VectorXd& beta, double sigma,
                                   bool with_gradient = true);

/// Laplace-approximated marginal log-likelihood. sigma == 0 gives the
/// ordinary logistic log-likelihood.
double laplace_loglik(const GlmmDesign& design, const Eigen::VectorXd& beta, double sigma);

struct GaussHermiteRule
{
    std::vector<double> nodes;
    std::vector<double> weights;  // for the weight function exp(-t^2)
};

/// Golub-Welsch rule for the physicists' Hermite weight.
GaussHermiteRule gauss_hermite(int nodes);

/// Adaptive Gauss-Hermite marginal log-likelihood, centered at the Laplace
/// mode and scaled by its curvature. nodes == 1 reproduces the Laplace value.
double aghq_loglik(const GlmmDesign& design, const Eigen::VectorXd& beta, double sigma, int nodes);

/// As aghq_loglik, with the exact gradient of the approximation (node
/// placement included) in the same layout as laplace_evaluate.
LaplaceEvaluation aghq_evaluate(const GlmmDesign& design, const Eigen::VectorXd& beta, double sigma, int nodes,
                                bool with_gradient = true);

// ─── Fitting ────────────────────────────────────────────────────────────────

struct GlmmOptions
{
    double relative_tolerance = 1e-9;
    double gradient_tolerance = 1e-5;
    int max_iterations = 500;
    double sigma_floor = 1e-8;
    /// Estimates below this are treated as a boundary (singular) fit.
    double boundary_threshold = 1e-4;
    double initial_sigma = 1.0;
    /// 1 = Laplace; more nodes use adaptive Gauss-Hermite quadrature.
    int quadrature_nodes = 1;
    /// Hold sigma fixed instead of estimating it.
    std::optional<double> fixed_sigma;
};

struct GlmmFit
{
    std::vector<std::string> names;
    Eigen::VectorXd beta;
    Eigen::VectorXd se;  // NaN where the information matrix is singular
    double sigma = 0.0;
    std::vector<double> modes;
    double loglik = 0.0;
    bool converged = false;
    bool boundary = false;
    int outer_iterations = 0;
    int max_inner_iterations = 0;
    int quadrature_nodes = 1;
    std::string status;

    std::string to_json() const;
    static GlmmFit from_json(std::string_view text);
};

GlmmFit fit_glmm(const GlmmDesign& design, const GlmmOptions& options = {});

// ─── Wald inference ─────────────────────────────────────────────────────────

inline constexpr double kWaldQuantile = 1.959964;

/// 2 * (1 - Phi(|z|)), floored at the smallest normal double so that the
/// result stays inside (0, 1].
double two_sided_normal_p(double z);

struct OddsRatioRow
{
    std::string name;
    double estimate = 0.0;
    std::optional<double> se;
    double odds_ratio = 1.0;
    std::optional<double> lower;
    std::optional<double> upper;
    std::optional<double> p_value;
    bool flagged = false;  // missing SE
};

struct OddsRatioTable
{
    std::vector<OddsRatioRow> rows;
};

OddsRatioRow wald_row(std::string name, double estimate, double se);

/// One row per non-intercept coefficient.
OddsRatioTable wald_table(const GlmmFit& fit, const GlmmDesign& design);

} // namespace sentrend
