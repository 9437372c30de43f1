#include "sentrend/stacker.hpp"

#include "sentrend/io.hpp"
#include "sentrend/logistic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace sentrend {

std::string_view to_string(FeatureTransform t) { return t == FeatureTransform::Logit ? "logit" : "identity"; }

FeatureTransform feature_transform_from_string(std::string_view s)
{
    if (s == "logit")
        return FeatureTransform::Logit;
    if (s == "identity")
        return FeatureTransform::Identity;
    throw ValidationError("unknown feature transform " + std::string(s));
}

double transform_feature(double p, FeatureTransform t)
{
    if (!(p >= 0.0 && p <= 1.0))
        throw ValidationError("probability outside [0,1]: " + format_double(p));
    if (t == FeatureTransform::Identity)
        return p;
    const double c = std::clamp(p, kClampEpsilon, 1.0 - kClampEpsilon);
    return std::log(c / (1.0 - c));
}

void StackModel::validate() const
{
    if (!std::isfinite(w0) || !std::isfinite(w1) || !std::isfinite(w2))
        throw ValidationError("stack model coefficients must be finite");
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ValidationError("stack threshold must lie in (0,1)");
}

std::string StackModel::to_json() const
{
    nlohmann::ordered_json j;
    j["w0"] = w0;
    j["w1"] = w1;
    j["w2"] = w2;
    j["transform"] = to_string(transform);
    j["threshold"] = threshold;
    return j.dump(1) + "\n";
}

StackModel StackModel::from_json(std::string_view text)
{
    StackModel m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.w0 = j.at("w0");
        m.w1 = j.at("w1");
        m.w2 = j.at("w2");
        m.transform = feature_transform_from_string(j.at("transform").get<std::string>());
        m.threshold = j.value("threshold", 0.5);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed stack model: ") + e.what());
    }
    m.validate();
    return m;
}

StackFit fit_stack(std::span<const StackObservation> observations, FeatureTransform transform, double threshold)
{
    std::size_t n = 0, positives = 0;
    for (const auto& o : observations)
        if (o.label) {
            if (*o.label != 0 && *o.label != 1)
                throw ValidationError("stack label must be 0 or 1 for " + o.msg_id);
            ++n;
            positives += static_cast<std::size_t>(*o.label);
        }
    if (positives == 0 || positives == n)
        throw ValidationError("stacker needs at least one observation of each label");

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 3);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    Eigen::Index row = 0;
    for (const auto& o : observations) {
        if (!o.label)
            continue;
        x(row, 0) = 1.0;
        x(row, 1) = transform_feature(o.p_gat, transform);
        x(row, 2) = transform_feature(o.p_upstream, transform);
        y[row] = *o.label;
        ++row;
    }
    const auto r = fit_logistic_irls(x, y);

    StackFit fit;
    fit.model.w0 = r.coefficients[0];
    fit.model.w1 = r.coefficients[1];
    fit.model.w2 = r.coefficients[2];
    fit.model.transform = transform;
    fit.model.threshold = threshold;
    fit.iterations = r.iterations;
    fit.deviance = r.deviance;
    fit.converged = r.converged;
    fit.separated = r.separated;
    return fit;
}

StackPrediction predict_stack(const StackModel& model, double p_gat, double p_upstream)
{
    const double eta = model.w0 + model.w1 * transform_feature(p_gat, model.transform)
                     + model.w2 * transform_feature(p_upstream, model.transform);
    StackPrediction p;
    p.p_negative = eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
    p.negative = p.p_negative >= model.threshold;
    return p;
}

double stack_deviance(const StackModel& model, std::span<const StackObservation> observations)
{
    double ll = 0.0;
    for (const auto& o : observations) {
        if (!o.label)
            continue;
        const double eta = model.w0 + model.w1 * transform_feature(o.p_gat, model.transform)
                         + model.w2 * transform_feature(o.p_upstream, model.transform);
        const double softplus = eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
        ll += *o.label * eta - softplus;
    }
    return -2.0 * ll;
}

} // namespace sentrend
