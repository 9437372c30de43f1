#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace sentrend {

enum class FeatureTransform { Logit, Identity };

std::string_view to_string(FeatureTransform t);
FeatureTransform feature_transform_from_string(std::string_view s);

/// Probabilities are clamped to [eps, 1 - eps] before the logit.
inline constexpr double kClampEpsilon = 1e-6;

double transform_feature(double p, FeatureTransform t);

struct StackObservation
{
    std::string msg_id;
    double p_gat = 0.0;
    double p_upstream = 0.0;
    std::optional<int> label;  // 1 = negative
};

struct StackModel
{
    double w0 = 0.0;
    double w1 = 0.0;  // GAT feature
    double w2 = 0.0;  // upstream feature
    FeatureTransform transform = FeatureTransform::Logit;
    double threshold = 0.5;

    void validate() const;
    std::string to_json() const;
    static StackModel from_json(std::string_view text);
};

struct StackFit
{
    StackModel model;
    int iterations = 0;
    double deviance = 0.0;
    bool converged = false;
    bool separated = false;
};

/// Maximum-likelihood logistic stacker fitted by IRLS on the labeled rows.
StackFit fit_stack(std::span<const StackObservation> observations, FeatureTransform transform = FeatureTransform::Logit,
                   double threshold = 0.5);

struct StackPrediction
{
    double p_negative = 0.0;
    bool negative = false;  // p_negative >= threshold
};

StackPrediction predict_stack(const StackModel& model, double p_gat, double p_upstream);

/// -2 * log-likelihood of the labeled rows under `model`.
double stack_deviance(const StackModel& model, std::span<const StackObservation> observations);

} // namespace sentrend
