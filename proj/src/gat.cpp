#include "sentrend/gat.hpp"

#include "sentrend/io.hpp"
#include "sentrend/optim.hpp"
#include "sentrend/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>

namespace sentrend {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(AttentionMode m)
{
    switch (m) {
    case AttentionMode::Successors: return "successors";
    case AttentionMode::Predecessors: return "predecessors";
    case AttentionMode::Both: return "both";
    }
    return "?";
}

AttentionMode attention_mode_from_string(std::string_view s)
{
    if (s == "successors") return AttentionMode::Successors;
    if (s == "predecessors") return AttentionMode::Predecessors;
    if (s == "both") return AttentionMode::Both;
    throw ValidationError("unknown attention mode " + std::string(s));
}

void GatConfig::validate() const
{
    if (layers < 1 || hidden_heads < 1 || hidden_dim < 1 || output_heads < 1 || classes < 2)
        throw ValidationError("GAT layer, head and dimension counts must be >= 1 (classes >= 2)");
    if (!(negative_slope > 0.0 && negative_slope < 1.0))
        throw ValidationError("GAT negative slope must lie in (0,1)");
    if (!(tolerance > 0.0))
        throw ValidationError("GAT tolerance must be positive");
    if (!(learning_rate > 0.0) || max_epochs < 1)
        throw ValidationError("GAT learning rate and max epochs must be positive");
}

// ─── Parameters ─────────────────────────────────────────────────────────────

GatParams GatParams::initialize(const GatConfig& config, int input_dim)
{
    config.validate();
    if (input_dim < 1)
        throw ValidationError("GAT input dimension must be >= 1");
    Xoshiro256 rng(config.init_seed);
    auto glorot = [&rng](Index rows, Index cols, double fan) {
        const double limit = std::sqrt(6.0 / fan);
        MatrixXd m(rows, cols);
        for (Index j = 0; j < cols; ++j)
            for (Index i = 0; i < rows; ++i)
                m(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
        return m;
    };

    GatParams p;
    p.config = config;
    p.input_dim = input_dim;
    int in = input_dim;
    for (int l = 0; l < config.layers; ++l) {
        const bool last = l + 1 == config.layers;
        const int heads = last ? config.output_heads : config.hidden_heads;
        const int out = last ? config.classes : config.hidden_dim;
        GatLayer layer;
        for (int h = 0; h < heads; ++h) {
            GatHead head;
            head.weight = glorot(out, in, in + out);
            head.attention = glorot(2 * out, 1, 2 * out + 1).col(0);
            layer.heads.push_back(std::move(head));
        }
        p.layers.push_back(std::move(layer));
        in = heads * out;
    }
    return p;
}

GatParams GatParams::zeros_like(const GatParams& like)
{
    GatParams z = like;
    for (auto& l : z.layers)
        for (auto& h : l.heads) {
            h.weight.setZero();
            h.attention.setZero();
        }
    return z;
}

Index GatParams::parameter_count() const
{
    Index n = 0;
    for (const auto& l : layers)
        for (const auto& h : l.heads)
            n += h.weight.size() + h.attention.size();
    return n;
}

VectorXd GatParams::flatten() const
{
    VectorXd v(parameter_count());
    Index at = 0;
    for (const auto& l : layers)
        for (const auto& h : l.heads) {
            v.segment(at, h.weight.size()) = h.weight.reshaped();
            at += h.weight.size();
            v.segment(at, h.attention.size()) = h.attention;
            at += h.attention.size();
        }
    return v;
}

void GatParams::assign(const VectorXd& flat)
{
    if (flat.size() != parameter_count())
        throw std::invalid_argument("flat parameter size mismatch");
    Index at = 0;
    for (auto& l : layers)
        for (auto& h : l.heads) {
            h.weight.reshaped() = flat.segment(at, h.weight.size());
            at += h.weight.size();
            h.attention = flat.segment(at, h.attention.size());
            at += h.attention.size();
        }
}

std::string GatParams::to_json() const
{
    nlohmann::ordered_json j;
    j["format"] = "gat-params-v1";
    auto& c = j["config"];
    c["layers"] = config.layers;
    c["hidden_heads"] = config.hidden_heads;
    c["hidden_dim"] = config.hidden_dim;
    c["output_heads"] = config.output_heads;
    c["classes"] = config.classes;
    c["negative_slope"] = config.negative_slope;
    c["learning_rate"] = config.learning_rate;
    c["max_epochs"] = config.max_epochs;
    c["tolerance"] = config.tolerance;
    c["mode"] = to_string(config.mode);
    c["init_seed"] = config.init_seed;
    j["input_dim"] = input_dim;
    auto jl = nlohmann::ordered_json::array();
    for (const auto& l : layers) {
        auto jh = nlohmann::ordered_json::array();
        for (const auto& h : l.heads) {
            std::vector<double> w(static_cast<std::size_t>(h.weight.size()));
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                w.data(), h.weight.rows(), h.weight.cols()) = h.weight;
            nlohmann::ordered_json head;
            head["weight"] = {{"rows", h.weight.rows()}, {"cols", h.weight.cols()}, {"data", w}};
            head["attention"] = std::vector<double>(h.attention.data(), h.attention.data() + h.attention.size());
            jh.push_back(std::move(head));
        }
        jl.push_back({{"heads", std::move(jh)}});
    }
    j["layers"] = std::move(jl);
    return j.dump(1) + "\n";
}

GatParams GatParams::from_json(std::string_view text)
{
    GatParams p;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format") != "gat-params-v1")
            throw ValidationError("unsupported GAT params format");
        const auto& c = j.at("config");
        p.config.layers = c.at("layers");
        p.config.hidden_heads = c.at("hidden_heads");
        p.config.hidden_dim = c.at("hidden_dim");
        p.config.output_heads = c.at("output_heads");
        p.config.classes = c.at("classes");
        p.config.negative_slope = c.at("negative_slope");
        p.config.learning_rate = c.at("learning_rate");
        p.config.max_epochs = c.at("max_epochs");
        p.config.tolerance = c.at("tolerance");
        p.config.mode = attention_mode_from_string(c.at("mode").get<std::string>());
        p.config.init_seed = c.at("init_seed");
        p.config.validate();
        p.input_dim = j.at("input_dim");
        for (const auto& jl : j.at("layers")) {
            GatLayer layer;
            for (const auto& jh : jl.at("heads")) {
                GatHead h;
                const Index rows = jh.at("weight").at("rows");
                const Index cols = jh.at("weight").at("cols");
                const auto w = jh.at("weight").at("data").get<std::vector<double>>();
                if (static_cast<Index>(w.size()) != rows * cols)
                    throw ValidationError("GAT weight data size mismatch");
                h.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                    w.data(), rows, cols);
                const auto a = jh.at("attention").get<std::vector<double>>();
                h.attention = Eigen::Map<const VectorXd>(a.data(), static_cast<Index>(a.size()));
                layer.heads.push_back(std::move(h));
            }
            p.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed GAT params: ") + e.what());
    }

    // Shape consistency with the config.
    if (static_cast<int>(p.layers.size()) != p.config.layers)
        throw ValidationError("GAT params layer count does not match config");
    Index in = p.input_dim;
    for (int l = 0; l < p.config.layers; ++l) {
        const bool last = l + 1 == p.config.layers;
        const int heads = last ? p.config.output_heads : p.config.hidden_heads;
        const int out = last ? p.config.classes : p.config.hidden_dim;
        if (static_cast<int>(p.layers[l].heads.size()) != heads)
            throw ValidationError("GAT params head count does not match config");
        for (const auto& h : p.layers[l].heads) {
            if (h.weight.rows() != out || h.weight.cols() != in || h.attention.size() != 2 * out)
                throw ValidationError("GAT params shape mismatch in layer " + std::to_string(l));
            if (!h.weight.allFinite() || !h.attention.allFinite())
                throw ValidationError("GAT params contain non-finite values");
        }
        in = heads * out;
    }
    return p;
}

// ─── Neighborhoods ──────────────────────────────────────────────────────────

AttentionNeighborhood AttentionNeighborhood::build(const MessageGraph& graph, AttentionMode mode)
{
    const Adjacency& adj = mode == AttentionMode::Successors     ? graph.successors()
                           : mode == AttentionMode::Predecessors ? graph.predecessors()
                                                                 : graph.undirected();
    AttentionNeighborhood nb;
    const auto n = graph.node_count();
    nb.offsets.resize(n + 1);
    nb.offsets[0] = 0;
    nb.members.reserve(n + adj.targets.size());
    for (NodeIndex i = 0; i < n; ++i) {
        nb.members.push_back(i);
        for (NodeIndex j : adj.row(i))
            nb.members.push_back(j);
        nb.offsets[i + 1] = nb.members.size();
    }
    return nb;
}

// ─── Forward / backward ─────────────────────────────────────────────────────

namespace {

double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_derivative(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

struct HeadCache
{
    MatrixXd z;                // n x out
    std::vector<double> raw;   // pre-activation scores, per neighborhood entry
    std::vector<double> alpha;
    MatrixXd agg;              // n x out
};

struct LayerCache
{
    MatrixXd input;
    std::vector<HeadCache> heads;
};

HeadCache head_forward(const GatHead& head, const MatrixXd& input, const AttentionNeighborhood& nb, double slope)
{
    HeadCache c;
    const Index out = head.weight.rows();
    c.z = input * head.weight.transpose();
    const VectorXd src = c.z * head.attention.head(out);
    const VectorXd dst = c.z * head.attention.tail(out);
    const auto n = nb.node_count();
    c.raw.resize(nb.members.size());
    c.alpha.resize(nb.members.size());
    c.agg = MatrixXd::Zero(static_cast<Index>(n), out);
    for (std::size_t i = 0; i < n; ++i) {
        const auto b = nb.offsets[i];
        const auto e = nb.offsets[i + 1];
        double peak = -std::numeric_limits<double>::infinity();
        for (auto k = b; k < e; ++k) {
            c.raw[k] = src[static_cast<Index>(i)] + dst[nb.members[k]];
            c.alpha[k] = leaky_relu(c.raw[k], slope);
            peak = std::max(peak, c.alpha[k]);
        }
        double total = 0.0;
        for (auto k = b; k < e; ++k) {
            c.alpha[k] = std::exp(c.alpha[k] - peak);
            total += c.alpha[k];
        }
        for (auto k = b; k < e; ++k) {
            c.alpha[k] /= total;
            c.agg.row(static_cast<Index>(i)) += c.alpha[k] * c.z.row(nb.members[k]);
        }
    }
    return c;
}

struct HeadGrad
{
    MatrixXd weight;
    VectorXd attention;
};

HeadGrad head_backward(const GatHead& head, const HeadCache& c, const MatrixXd& input, const AttentionNeighborhood& nb,
                       double slope, const MatrixXd& d_agg, MatrixXd& d_input)
{
    const Index out = head.weight.rows();
    const auto n = nb.node_count();
    MatrixXd dz = MatrixXd::Zero(c.z.rows(), out);
    VectorXd d_src = VectorXd::Zero(static_cast<Index>(n));
    VectorXd d_dst = VectorXd::Zero(static_cast<Index>(n));
    std::vector<double> d_alpha;
    for (std::size_t i = 0; i < n; ++i) {
        const auto b = nb.offsets[i];
        const auto e = nb.offsets[i + 1];
        const auto gi = d_agg.row(static_cast<Index>(i));
        d_alpha.assign(e - b, 0.0);
        double weighted = 0.0;
        for (auto k = b; k < e; ++k) {
            const auto j = nb.members[k];
            d_alpha[k - b] = gi.dot(c.z.row(j));
            dz.row(j) += c.alpha[k] * gi;
            weighted += c.alpha[k] * d_alpha[k - b];
        }
        for (auto k = b; k < e; ++k) {
            const double d_score = c.alpha[k] * (d_alpha[k - b] - weighted);
            const double d_raw = d_score * (c.raw[k] > 0.0 ? 1.0 : slope);
            d_src[static_cast<Index>(i)] += d_raw;
            d_dst[nb.members[k]] += d_raw;
        }
    }
    HeadGrad g;
    g.attention.resize(2 * out);
    g.attention.head(out) = c.z.transpose() * d_src;
    g.attention.tail(out) = c.z.transpose() * d_dst;
    dz += d_src * head.attention.head(out).transpose();
    dz += d_dst * head.attention.tail(out).transpose();
    g.weight = dz.transpose() * input;
    d_input += dz * head.weight;
    return g;
}

void check_inputs(const GatParams& params, const MessageGraph& graph, const MatrixXd& features)
{
    if (params.layers.empty())
        throw ValidationError("GAT params have no layers");
    if (features.rows() != static_cast<Index>(graph.node_count()))
        throw ValidationError("feature rows (" + std::to_string(features.rows()) + ") do not match graph nodes ("
                              + std::to_string(graph.node_count()) + ")");
    if (features.cols() != params.input_dim)
        throw ValidationError("feature dimension " + std::to_string(features.cols()) + " does not match params input "
                              + std::to_string(params.input_dim));
    if (!features.allFinite())
        throw ValidationError("features contain NaN or Inf");
}

struct ForwardState
{
    std::vector<LayerCache> layers;
    MatrixXd logits;
};

ForwardState run_forward(const GatParams& params, const AttentionNeighborhood& nb, const MatrixXd& features)
{
    ForwardState st;
    MatrixXd h = features;
    const auto depth = params.layers.size();
    for (std::size_t l = 0; l < depth; ++l) {
        LayerCache cache;
        cache.input = h;
        for (const auto& head : params.layers[l].heads)
            cache.heads.push_back(head_forward(head, cache.input, nb, params.config.negative_slope));
        const auto heads = cache.heads.size();
        if (l + 1 < depth) {
            const Index out = cache.heads[0].agg.cols();
            h.resize(cache.input.rows(), static_cast<Index>(heads) * out);
            for (std::size_t k = 0; k < heads; ++k)
                h.middleCols(static_cast<Index>(k) * out, out) = cache.heads[k].agg.unaryExpr(&elu);
        } else {
            st.logits = cache.heads[0].agg;
            for (std::size_t k = 1; k < heads; ++k)
                st.logits += cache.heads[k].agg;
            st.logits /= static_cast<double>(heads);
        }
        st.layers.push_back(std::move(cache));
    }
    return st;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row)
{
    const double peak = row.maxCoeff();
    return peak + std::log((row.array() - peak).exp().sum());
}

} // namespace

GatForwardResult gat_forward_detailed(const GatParams& params, const MessageGraph& graph, const MatrixXd& features)
{
    GatForwardResult r;
    if (graph.node_count() == 0) {
        r.logits = MatrixXd(0, params.config.classes);
        return r;
    }
    check_inputs(params, graph, features);
    const auto nb = AttentionNeighborhood::build(graph, params.config.mode);
    auto st = run_forward(params, nb, features);
    r.logits = std::move(st.logits);
    r.p_negative.resize(graph.node_count());
    for (Index i = 0; i < r.logits.rows(); ++i)
        r.p_negative[static_cast<std::size_t>(i)] = std::exp(r.logits(i, 1) - log_sum_exp(r.logits.row(i)));
    for (auto& layer : st.layers) {
        std::vector<std::vector<double>> heads;
        for (auto& h : layer.heads)
            heads.push_back(std::move(h.alpha));
        r.attention.push_back(std::move(heads));
    }
    return r;
}

SentimentProbs gat_forward(const GatParams& params, const MessageGraph& graph, const MatrixXd& features)
{
    SentimentProbs out;
    out.source = ProbSource::Gat;
    out.msg_ids = graph.node_ids();
    out.p_negative = gat_forward_detailed(params, graph, features).p_negative;
    return out;
}

GatLossGradient gat_gradient(const GatParams& params, const MessageGraph& graph, const MatrixXd& features,
                             std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask)
{
    check_inputs(params, graph, features);
    const auto n = graph.node_count();
    if (labels.size() != n || mask.size() != n)
        throw ValidationError("labels and mask must have one entry per node");
    std::size_t masked = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) {
            ++masked;
            if (labels[i] > 1)
                throw ValidationError("labels must be binary");
        }
    if (masked == 0)
        throw ValidationError("training mask is empty");

    const auto nb = AttentionNeighborhood::build(graph, params.config.mode);
    const auto st = run_forward(params, nb, features);

    GatLossGradient out;
    out.gradient = GatParams::zeros_like(params);
    const double scale = 1.0 / static_cast<double>(masked);
    MatrixXd d_logits = MatrixXd::Zero(st.logits.rows(), st.logits.cols());
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i])
            continue;
        const auto row = st.logits.row(static_cast<Index>(i));
        const double lse = log_sum_exp(row);
        out.loss += (lse - row(labels[i])) * scale;
        d_logits.row(static_cast<Index>(i)) = (row.array() - lse).exp() * scale;
        d_logits(static_cast<Index>(i), labels[i]) -= scale;
    }

    MatrixXd upstream = d_logits;
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& cache = st.layers[l];
        const auto& layer = params.layers[l];
        const bool last = l + 1 == params.layers.size();
        MatrixXd d_input = MatrixXd::Zero(cache.input.rows(), cache.input.cols());
        for (std::size_t k = 0; k < layer.heads.size(); ++k) {
            const auto& hc = cache.heads[k];
            const Index out_dim = hc.agg.cols();
            MatrixXd d_agg;
            if (last)
                d_agg = upstream / static_cast<double>(layer.heads.size());
            else
                d_agg = upstream.middleCols(static_cast<Index>(k) * out_dim, out_dim).cwiseProduct(
                    hc.agg.unaryExpr(&elu_derivative));
            auto g = head_backward(layer.heads[k], hc, cache.input, nb, params.config.negative_slope, d_agg, d_input);
            out.gradient.layers[l].heads[k].weight = std::move(g.weight);
            out.gradient.layers[l].heads[k].attention = std::move(g.attention);
        }
        upstream = std::move(d_input);
    }
    if (!std::isfinite(out.loss))
        throw std::runtime_error("GAT loss is not finite");
    return out;
}

GatTrainResult gat_train(const GatConfig& config, const MessageGraph& graph, const MatrixXd& features,
                         std::span<const std::uint8_t> labels, std::span<const std::uint8_t> mask)
{
    config.validate();
    GatParams params = GatParams::initialize(config, static_cast<int>(features.cols()));
    check_inputs(params, graph, features);

    GatParams scratch = params;
    Objective objective = [&](const VectorXd& x, VectorXd& grad) {
        scratch.assign(x);
        auto lg = gat_gradient(scratch, graph, features, labels, mask);
        grad = lg.gradient.flatten();
        return lg.loss;
    };

    LbfgsOptions opt;
    opt.max_iterations = config.max_epochs;
    opt.relative_tolerance = config.tolerance;
    opt.gradient_tolerance = 1e-8;
    opt.require_both = false;
    opt.first_step = config.learning_rate;
    const auto r = minimize_lbfgs(objective, params.flatten(), opt);

    GatTrainResult out;
    params.assign(r.x);
    out.params = std::move(params);
    out.final_loss = r.value;
    out.epochs = r.iterations;
    out.converged = r.converged;
    out.loss_history = r.history;
    return out;
}

} // namespace sentrend
