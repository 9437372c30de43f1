#include "sentrend/glmm.hpp"

#include "sentrend/io.hpp"
#include "sentrend/optim.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <functional>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

namespace sentrend {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double softplus(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double sigmoid(double eta)
{
    if (eta >= 0.0)
        return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

std::string_view kind_name(ColumnKind k)
{
    switch (k) {
    case ColumnKind::Intercept: return "intercept";
    case ColumnKind::Dummy: return "dummy";
    case ColumnKind::Numeric: return "numeric";
    }
    return "?";
}

ColumnKind kind_from_name(std::string_view s)
{
    if (s == "intercept") return ColumnKind::Intercept;
    if (s == "dummy") return ColumnKind::Dummy;
    if (s == "numeric") return ColumnKind::Numeric;
    throw ValidationError("unknown column kind " + std::string(s));
}

} // namespace

// ─── Design ─────────────────────────────────────────────────────────────────

ReferenceLevels default_reference_levels()
{
    return {{"region", "Midwest"}, {"type", "Public"}, {"year", "2019"},
            {"d1", "No"},          {"cchie", "BaccalaureateOrMasters"}, {"medical", "No"}};
}

std::vector<Index> GlmmDesign::cluster_offsets() const
{
    std::vector<Index> off(cluster_names.size() + 1, 0);
    for (int c : cluster)
        ++off[static_cast<std::size_t>(c) + 1];
    std::partial_sum(off.begin(), off.end(), off.begin());
    return off;
}

void GlmmDesign::validate() const
{
    const Index rows = x.rows();
    if (successes.size() != rows || trials.size() != rows || static_cast<Index>(cluster.size()) != rows)
        throw ValidationError("design vectors have inconsistent lengths");
    if (static_cast<Index>(columns.size()) != x.cols())
        throw ValidationError("design column metadata does not match matrix width");
    for (Index i = 0; i < rows; ++i) {
        const int c = cluster[static_cast<std::size_t>(i)];
        if (c < 0 || c >= cluster_count())
            throw ValidationError("cluster id out of range");
        if (i > 0 && c < cluster[static_cast<std::size_t>(i - 1)])
            throw ValidationError("design rows are not grouped by cluster");
        if (!(trials[i] > 0.0) || successes[i] < 0.0 || successes[i] > trials[i])
            throw ValidationError("design counts are invalid at row " + std::to_string(i));
    }
    if (!x.allFinite())
        throw ValidationError("design matrix contains non-finite values");
    for (Index j = 0; j < x.cols(); ++j)
        if (columns[static_cast<std::size_t>(j)].kind == ColumnKind::Dummy)
            for (Index i = 0; i < rows; ++i)
                if (x(i, j) != 0.0 && x(i, j) != 1.0)
                    throw ValidationError("dummy column " + columns[static_cast<std::size_t>(j)].name + " is not 0/1");
}

GlmmDesign GlmmDesign::from_bernoulli(const MatrixXd& x, const VectorXd& y, std::span<const int> cluster,
                                      std::vector<ColumnInfo> columns)
{
    if (x.rows() != y.size() || static_cast<Index>(cluster.size()) != x.rows())
        throw ValidationError("design inputs have inconsistent lengths");
    int clusters = 0;
    for (int c : cluster) {
        if (c < 0)
            throw ValidationError("negative cluster id");
        clusters = std::max(clusters, c + 1);
    }
    std::vector<Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return cluster[static_cast<std::size_t>(a)] < cluster[static_cast<std::size_t>(b)];
    });

    GlmmDesign d;
    d.x.resize(x.rows(), x.cols());
    d.successes.resize(x.rows());
    d.trials = VectorXd::Ones(x.rows());
    d.cluster.resize(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        d.x.row(static_cast<Index>(r)) = x.row(order[r]);
        d.successes[static_cast<Index>(r)] = y[order[r]];
        d.cluster[r] = cluster[static_cast<std::size_t>(order[r])];
    }
    for (int k = 0; k < clusters; ++k)
        d.cluster_names.push_back(std::to_string(k));
    if (columns.empty()) {
        for (Index j = 0; j < x.cols(); ++j) {
            ColumnInfo c;
            const bool ones = x.rows() > 0 && (x.col(j).array() == 1.0).all();
            c.kind = ones ? ColumnKind::Intercept : ColumnKind::Numeric;
            c.name = ones ? "(Intercept)" : "x" + std::to_string(j);
            c.variable = c.name;
            columns.push_back(std::move(c));
        }
    }
    d.columns = std::move(columns);
    d.validate();
    return d;
}

namespace {

struct Level
{
    std::string label;
    std::function<bool(const SchoolCovariates&)> matches;
};

struct Categorical
{
    std::string variable;
    std::vector<Level> levels;
};

std::vector<Categorical> school_categoricals()
{
    std::vector<Categorical> out;
    auto region = [](Region r) { return [r](const SchoolCovariates& s) { return s.region == r; }; };
    out.push_back({"region",
                   {{"Northeast", region(Region::Northeast)},
                    {"South", region(Region::South)},
                    {"West", region(Region::West)},
                    {"Midwest", region(Region::Midwest)}}});
    out.push_back({"type",
                   {{"Private", [](const SchoolCovariates& s) { return s.school_type == SchoolType::Private; }},
                    {"Public", [](const SchoolCovariates& s) { return s.school_type == SchoolType::Public; }}}});
    out.push_back({"d1",
                   {{"Yes", [](const SchoolCovariates& s) { return s.d1 == true; }},
                    {"No", [](const SchoolCovariates& s) { return s.d1 == false; }}}});
    auto cchie = [](Cchie c) { return [c](const SchoolCovariates& s) { return s.cchie == c; }; };
    out.push_back({"cchie",
                   {{"BaccalaureateOrMasters", cchie(Cchie::BaccalaureateOrMasters)},
                    {"DoctoralHigh", cchie(Cchie::DoctoralHigh)},
                    {"DoctoralVeryHigh", cchie(Cchie::DoctoralVeryHigh)}}});
    out.push_back({"medical",
                   {{"Yes", [](const SchoolCovariates& s) { return s.medical == true; }},
                    {"No", [](const SchoolCovariates& s) { return s.medical == false; }}}});
    return out;
}

} // namespace

GlmmDesign build_design(std::span<const ClassifiedMessage> messages, std::span<const SchoolCovariates> covariates,
                        const ReferenceLevels& reference, const DesignOptions& options)
{
    ReferenceLevels ref = default_reference_levels();
    for (const auto& [k, v] : reference) {
        if (!ref.contains(k))
            throw ValidationError("unknown categorical variable in reference levels: " + k);
        ref[k] = v;
    }
    auto categoricals = school_categoricals();
    // Year is placed after type to follow the reported table layout.
    for (const auto& cat : categoricals) {
        const auto& r = ref.at(cat.variable);
        if (std::none_of(cat.levels.begin(), cat.levels.end(), [&](const Level& l) { return l.label == r; }))
            throw ValidationError("unknown reference level '" + r + "' for " + cat.variable);
    }
    int ref_year = 0;
    {
        const auto& s = ref.at("year");
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), ref_year);
        if (ec != std::errc() || ptr != s.data() + s.size())
            throw ValidationError("unknown reference level '" + s + "' for year");
    }

    std::map<std::string, const SchoolCovariates*> by_id;
    for (const auto& c : covariates)
        by_id.emplace(c.school_id, &c);

    std::set<std::string> used_names, dropped;
    std::set<int> years;
    for (const auto& m : messages) {
        auto it = by_id.find(m.school_id);
        if (it == by_id.end() || !it->second->complete()) {
            dropped.insert(m.school_id);
            continue;
        }
        used_names.insert(m.school_id);
        years.insert(m.year);
    }
    if (used_names.size() < 2)
        throw ValidationError("GLMM needs at least 2 clusters with complete covariates, got "
                              + std::to_string(used_names.size()));
    if (!years.contains(ref_year))
        throw ValidationError("unknown reference level '" + ref.at("year") + "' for year: no messages in that year");

    GlmmDesign d;
    d.cluster_names.assign(used_names.begin(), used_names.end());
    d.dropped_schools.assign(dropped.begin(), dropped.end());
    std::map<std::string, int> cluster_of;
    for (std::size_t k = 0; k < d.cluster_names.size(); ++k)
        cluster_of[d.cluster_names[k]] = static_cast<int>(k);
    std::vector<const SchoolCovariates*> schools;
    for (const auto& name : d.cluster_names)
        schools.push_back(by_id.at(name));

    // Columns.
    using Filler = std::function<double(const SchoolCovariates&, int year)>;
    std::vector<Filler> fill;
    d.columns.push_back({"(Intercept)", "(Intercept)", "", ColumnKind::Intercept, "", 0.0, 1.0});
    fill.push_back([](const SchoolCovariates&, int) { return 1.0; });

    auto add_categorical = [&](const Categorical& cat) {
        for (const auto& level : cat.levels) {
            if (level.label == ref.at(cat.variable))
                continue;
            const bool present = std::any_of(schools.begin(), schools.end(),
                                             [&](const SchoolCovariates* s) { return level.matches(*s); });
            if (options.drop_empty_levels && !present)
                continue;
            d.columns.push_back({cat.variable + ":" + level.label, cat.variable, level.label, ColumnKind::Dummy,
                                 ref.at(cat.variable), 0.0, 1.0});
            fill.push_back([m = level.matches](const SchoolCovariates& s, int) { return m(s) ? 1.0 : 0.0; });
        }
    };
    add_categorical(categoricals[0]);  // region
    add_categorical(categoricals[1]);  // type
    for (int y : years) {
        if (y == ref_year)
            continue;
        d.columns.push_back({"year:" + std::to_string(y), "year", std::to_string(y), ColumnKind::Dummy,
                             ref.at("year"), 0.0, 1.0});
        fill.push_back([y](const SchoolCovariates&, int year) { return year == y ? 1.0 : 0.0; });
    }
    add_categorical(categoricals[2]);  // d1
    add_categorical(categoricals[3]);  // cchie
    add_categorical(categoricals[4]);  // medical

    for (const auto& f : kNumericFields) {
        double sum = 0.0;
        for (const auto* s : schools)
            sum += *(s->*f.member);
        const double mean = sum / static_cast<double>(schools.size());
        double ss = 0.0;
        for (const auto* s : schools)
            ss += (*(s->*f.member) - mean) * (*(s->*f.member) - mean);
        const double sd = std::sqrt(ss / static_cast<double>(schools.size() - 1));
        d.columns.push_back({std::string(f.name), std::string(f.name), "", ColumnKind::Numeric, "", mean, sd});
        fill.push_back([member = f.member, mean, sd](const SchoolCovariates& s, int) {
            return sd > 0.0 ? (*(s.*member) - mean) / sd : 0.0;
        });
    }

    // Aggregate messages into (cluster, year) cells.
    std::map<std::pair<int, int>, std::pair<double, double>> cells;
    for (const auto& m : messages) {
        auto it = cluster_of.find(m.school_id);
        if (it == cluster_of.end())
            continue;
        auto& cell = cells[{it->second, m.year}];
        cell.first += m.negative ? 1.0 : 0.0;
        cell.second += 1.0;
    }
    const auto rows = static_cast<Index>(cells.size());
    d.x.resize(rows, static_cast<Index>(d.columns.size()));
    d.successes.resize(rows);
    d.trials.resize(rows);
    Index r = 0;
    for (const auto& [key, counts] : cells) {
        const auto& school = *schools[static_cast<std::size_t>(key.first)];
        for (std::size_t j = 0; j < fill.size(); ++j)
            d.x(r, static_cast<Index>(j)) = fill[j](school, key.second);
        d.successes[r] = counts.first;
        d.trials[r] = counts.second;
        d.cluster.push_back(key.first);
        ++r;
    }
    d.validate();
    return d;
}

namespace {

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out += static_cast<char>((v >> (8 * i)) & 0xffU);
}

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out += static_cast<char>((v >> (8 * i)) & 0xffU);
}

std::uint64_t get_u64(std::string_view s, std::size_t at, int bytes)
{
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
}

} // namespace

std::string GlmmDesign::encode() const
{
    std::string payload;
    const Index rows = x.rows();
    payload.reserve(static_cast<std::size_t>(rows * (x.cols() + 2) * 8 + rows * 4));
    for (Index j = 0; j < x.cols(); ++j)
        for (Index i = 0; i < rows; ++i)
            put_u64(payload, std::bit_cast<std::uint64_t>(x(i, j)));
    for (Index i = 0; i < rows; ++i)
        put_u64(payload, std::bit_cast<std::uint64_t>(successes[i]));
    for (Index i = 0; i < rows; ++i)
        put_u64(payload, std::bit_cast<std::uint64_t>(trials[i]));
    for (int c : cluster)
        put_u32(payload, static_cast<std::uint32_t>(c));

    uLongf packed_size = compressBound(static_cast<uLong>(payload.size()));
    std::string packed(packed_size, '\0');
    if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size,
                  reinterpret_cast<const Bytef*>(payload.data()), static_cast<uLong>(payload.size()), 6)
        != Z_OK)
        throw std::runtime_error("design compression failed");
    packed.resize(packed_size);

    nlohmann::ordered_json h;
    h["format"] = "glmd1";
    h["rows"] = rows;
    h["cols"] = x.cols();
    auto cols = nlohmann::ordered_json::array();
    for (const auto& c : columns)
        cols.push_back({{"name", c.name},
                        {"variable", c.variable},
                        {"level", c.level},
                        {"kind", kind_name(c.kind)},
                        {"reference", c.reference},
                        {"mean", c.mean},
                        {"sd", c.sd}});
    h["columns"] = std::move(cols);
    h["cluster_names"] = cluster_names;
    h["dropped_schools"] = dropped_schools;
    h["payload_bytes"] = payload.size();
    h["compressed_bytes"] = packed.size();
    const auto header = h.dump();

    std::string out = "GLMD1\n";
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    out += packed;
    return out;
}

GlmmDesign GlmmDesign::decode(std::string_view bytes)
{
    if (bytes.size() < 10 || bytes.substr(0, 6) != "GLMD1\n")
        throw ValidationError("not a GLMD1 design file");
    const auto hlen = static_cast<std::size_t>(get_u64(bytes, 6, 4));
    if (bytes.size() < 10 + hlen)
        throw ValidationError("truncated design header");
    GlmmDesign d;
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(10, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed design header: ") + e.what());
    }
    const Index rows = h.at("rows");
    const Index cols = h.at("cols");
    const std::size_t payload_bytes = h.at("payload_bytes");
    const std::size_t compressed = h.at("compressed_bytes");
    if (bytes.size() != 10 + hlen + compressed)
        throw ValidationError("design payload size mismatch");
    std::string payload(payload_bytes, '\0');
    uLongf out_size = static_cast<uLongf>(payload_bytes);
    if (uncompress(reinterpret_cast<Bytef*>(payload.data()), &out_size,
                   reinterpret_cast<const Bytef*>(bytes.data() + 10 + hlen), static_cast<uLong>(compressed))
            != Z_OK
        || out_size != payload_bytes)
        throw ValidationError("design payload is corrupt");
    if (payload_bytes != static_cast<std::size_t>(rows * (cols + 2) * 8 + rows * 4))
        throw ValidationError("design payload has unexpected size");

    for (const auto& c : h.at("columns"))
        d.columns.push_back({c.at("name"), c.at("variable"), c.at("level"), kind_from_name(c.at("kind").get<std::string>()),
                             c.at("reference"), c.at("mean"), c.at("sd")});
    d.cluster_names = h.at("cluster_names").get<std::vector<std::string>>();
    d.dropped_schools = h.at("dropped_schools").get<std::vector<std::string>>();
    d.x.resize(rows, cols);
    d.successes.resize(rows);
    d.trials.resize(rows);
    std::size_t at = 0;
    auto next_double = [&] {
        const double v = std::bit_cast<double>(get_u64(payload, at, 8));
        at += 8;
        return v;
    };
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
            d.x(i, j) = next_double();
    for (Index i = 0; i < rows; ++i)
        d.successes[i] = next_double();
    for (Index i = 0; i < rows; ++i)
        d.trials[i] = next_double();
    for (Index i = 0; i < rows; ++i) {
        d.cluster.push_back(static_cast<int>(get_u64(payload, at, 4)));
        at += 4;
    }
    d.validate();
    return d;
}

// ─── Likelihood ─────────────────────────────────────────────────────────────

namespace {

constexpr int kMaxInnerIterations = 100;
constexpr double kModeTolerance = 1e-10;
constexpr double kLocalStep = 1e-6;

/// Log joint density of one cluster, excluding the -log(sigma) constant.
double cluster_joint(const VectorXd& eta0, const VectorXd& s, const VectorXd& n, Index b, Index e, double z,
                     double inv_var)
{
    double g = 0.0;
    for (Index i = b; i < e; ++i) {
        const double eta = eta0[i] + z;
        g += s[i] * eta - n[i] * softplus(eta);
    }
    return g - 0.5 * z * z * inv_var;
}

struct ModeResult
{
    double z = 0.0;
    int iterations = 0;
};

ModeResult find_mode(const VectorXd& eta0, const VectorXd& s, const VectorXd& n, Index b, Index e, double inv_var,
                     const std::string& name)
{
    ModeResult m;
    double g = cluster_joint(eta0, s, n, b, e, 0.0, inv_var);
    for (m.iterations = 1; m.iterations <= kMaxInnerIterations; ++m.iterations) {
        double score = -m.z * inv_var;
        double info = inv_var;
        for (Index i = b; i < e; ++i) {
            const double mu = sigmoid(eta0[i] + m.z);
            score += s[i] - n[i] * mu;
            info += n[i] * mu * (1.0 - mu);
        }
        double step = score / info;
        if (!std::isfinite(step))
            throw std::runtime_error("non-finite Newton step for cluster " + name);
        if (std::abs(step) < kLocalStep) {
            m.z += step;
            if (std::abs(step) < kModeTolerance)
                return m;
            continue;
        }
        double g_new = cluster_joint(eta0, s, n, b, e, m.z + step, inv_var);
        for (int h = 0; h < 60 && g_new < g; ++h) {
            step *= 0.5;
            g_new = cluster_joint(eta0, s, n, b, e, m.z + step, inv_var);
        }
        if (g_new >= g) {
            m.z += step;
            g = g_new;
        }
        if (std::abs(step) < kModeTolerance)
            return m;
    }
    throw std::runtime_error("random-effect mode did not converge for cluster " + name);
}

} // namespace

LaplaceEvaluation laplace_evaluate(const GlmmDesign& design, const VectorXd& beta, double sigma, bool with_gradient)
{
    if (beta.size() != design.x.cols())
        throw ValidationError("beta length " + std::to_string(beta.size()) + " does not match design width "
                              + std::to_string(design.x.cols()));
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw ValidationError("sigma must be finite and >= 0");

    const VectorXd eta0 = design.x * beta;
    const auto& s = design.successes;
    const auto& n = design.trials;
    const auto offsets = design.cluster_offsets();
    const Index p = beta.size();
    const auto k_count = static_cast<std::size_t>(design.cluster_count());

    LaplaceEvaluation ev;
    ev.gradient = VectorXd::Zero(p + 1);
    ev.modes.assign(k_count, 0.0);
    ev.curvatures.assign(k_count, 0.0);

    if (sigma == 0.0) {
        for (Index i = 0; i < eta0.size(); ++i) {
            ev.loglik += s[i] * eta0[i] - n[i] * softplus(eta0[i]);
            if (with_gradient)
                ev.gradient.head(p) += (s[i] - n[i] * sigmoid(eta0[i])) * design.x.row(i).transpose();
        }
        if (!std::isfinite(ev.loglik))
            throw std::runtime_error("non-finite logistic log-likelihood");
        return ev;
    }

    const double inv_var = 1.0 / (sigma * sigma);
    const double log_sigma = std::log(sigma);
    VectorXd d_info(p), d_mode(p);
    for (std::size_t k = 0; k < k_count; ++k) {
        const Index b = offsets[k];
        const Index e = offsets[k + 1];
        const auto mode = find_mode(eta0, s, n, b, e, inv_var, design.cluster_names[k]);
        ev.max_inner_iterations = std::max(ev.max_inner_iterations, mode.iterations);
        const double z = mode.z;

        double g = -0.5 * z * z * inv_var;
        double info = inv_var;
        double info_dz = 0.0;
        d_info.setZero();
        d_mode.setZero();
        for (Index i = b; i < e; ++i) {
            const double eta = eta0[i] + z;
            const double mu = sigmoid(eta);
            const double w = mu * (1.0 - mu);
            g += s[i] * eta - n[i] * softplus(eta);
            info += n[i] * w;
            if (with_gradient) {
                const double skew = n[i] * w * (1.0 - 2.0 * mu);
                info_dz += skew;
                const auto xi = design.x.row(i).transpose();
                ev.gradient.head(p) += (s[i] - n[i] * mu) * xi;
                d_info += skew * xi;
                d_mode -= n[i] * w * xi;
            }
        }
        const double term = g - 0.5 * std::log(info) - log_sigma;
        if (!std::isfinite(term))
            throw std::runtime_error("non-finite Laplace term for cluster " + design.cluster_names[k]);
        ev.loglik += term;
        ev.modes[k] = z;
        ev.curvatures[k] = info;
        if (with_gradient) {
            d_mode /= info;
            ev.gradient.head(p) -= (d_info + info_dz * d_mode) / (2.0 * info);
            const double dz_dtau = 2.0 * z * inv_var / info;
            ev.gradient[p] += z * z * inv_var - (-2.0 * inv_var + info_dz * dz_dtau) / (2.0 * info) - 1.0;
        }
    }
    return ev;
}

double laplace_loglik(const GlmmDesign& design, const VectorXd& beta, double sigma)
{
    return laplace_evaluate(design, beta, sigma, false).loglik;
}

GaussHermiteRule gauss_hermite(int nodes)
{
    if (nodes < 1)
        throw ValidationError("Gauss-Hermite rule needs at least one node");
    MatrixXd jacobi = MatrixXd::Zero(nodes, nodes);
    for (int k = 1; k < nodes; ++k) {
        jacobi(k, k - 1) = std::sqrt(k / 2.0);
        jacobi(k - 1, k) = jacobi(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(jacobi);
    GaussHermiteRule rule;
    const double mass = std::sqrt(std::numbers::pi);
    for (int q = 0; q < nodes; ++q) {
        rule.nodes.push_back(eig.eigenvalues()[q]);
        const double v = eig.eigenvectors()(0, q);
        rule.weights.push_back(mass * v * v);
    }
    // Enforce the exact symmetry of the rule.
    for (int q = 0; q < nodes / 2; ++q) {
        const int r = nodes - 1 - q;
        const double t = 0.5 * (rule.nodes[static_cast<std::size_t>(r)] - rule.nodes[static_cast<std::size_t>(q)]);
        const double w = 0.5 * (rule.weights[static_cast<std::size_t>(r)] + rule.weights[static_cast<std::size_t>(q)]);
        rule.nodes[static_cast<std::size_t>(q)] = -t;
        rule.nodes[static_cast<std::size_t>(r)] = t;
        rule.weights[static_cast<std::size_t>(q)] = rule.weights[static_cast<std::size_t>(r)] = w;
    }
    if (nodes % 2 == 1)
        rule.nodes[static_cast<std::size_t>(nodes / 2)] = 0.0;
    return rule;
}

LaplaceEvaluation aghq_evaluate(const GlmmDesign& design, const VectorXd& beta, double sigma, int nodes,
                                bool with_gradient)
{
    if (!(sigma > 0.0))
        throw ValidationError("AGHQ requires sigma > 0");
    const auto rule = gauss_hermite(nodes);
    const auto lap = laplace_evaluate(design, beta, sigma, false);
    const VectorXd eta0 = design.x * beta;
    const auto& s = design.successes;
    const auto& n = design.trials;
    const auto offsets = design.cluster_offsets();
    const Index p = beta.size();
    const double inv_var = 1.0 / (sigma * sigma);
    const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi) + std::log(sigma);
    const auto q_count = rule.nodes.size();

    LaplaceEvaluation ev;
    ev.gradient = VectorXd::Zero(p + 1);
    ev.modes = lap.modes;
    ev.curvatures = lap.curvatures;
    ev.max_inner_iterations = lap.max_inner_iterations;

    std::vector<double> terms(q_count), slope(q_count);
    MatrixXd node_grad(p, static_cast<Index>(q_count));
    VectorXd d_info(p), dz_dbeta(p);
    for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
        const Index b = offsets[k];
        const Index e = offsets[k + 1];
        const double mode = lap.modes[k];
        const double info = lap.curvatures[k];
        const double scale = std::sqrt(2.0 / info);

        // Sensitivities of the mode and the curvature.
        double info_dz = 0.0;
        d_info.setZero();
        dz_dbeta.setZero();
        if (with_gradient) {
            for (Index i = b; i < e; ++i) {
                const double mu = sigmoid(eta0[i] + mode);
                const double w = mu * (1.0 - mu);
                const double skew = n[i] * w * (1.0 - 2.0 * mu);
                info_dz += skew;
                d_info += skew * design.x.row(i).transpose();
                dz_dbeta -= n[i] * w * design.x.row(i).transpose();
            }
            dz_dbeta /= info;
        }
        const double dz_dtau = 2.0 * mode * inv_var / info;
        const VectorXd dh_dbeta = d_info + info_dz * dz_dbeta;
        const double dh_dtau = -2.0 * inv_var + info_dz * dz_dtau;
        const VectorXd ds_dbeta = -0.5 * scale / info * dh_dbeta;
        const double ds_dtau = -0.5 * scale / info * dh_dtau;

        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < q_count; ++q) {
            const double t = rule.nodes[q];
            const double z = mode + scale * t;
            double g = -0.5 * z * z * inv_var;
            double dg = -z * inv_var;
            auto col = node_grad.col(static_cast<Index>(q));
            col.setZero();
            for (Index i = b; i < e; ++i) {
                const double eta = eta0[i] + z;
                g += s[i] * eta - n[i] * softplus(eta);
                if (with_gradient) {
                    const double r = s[i] - n[i] * sigmoid(eta);
                    dg += r;
                    col += r * design.x.row(i).transpose();
                }
            }
            terms[q] = std::log(rule.weights[q]) + t * t + g;
            slope[q] = dg;
            peak = std::max(peak, terms[q]);
        }
        double acc = 0.0;
        for (double v : terms)
            acc += std::exp(v - peak);
        const double term = std::log(scale) + peak + std::log(acc) - log_norm;
        if (!std::isfinite(term))
            throw std::runtime_error("non-finite AGHQ term for cluster " + design.cluster_names[k]);
        ev.loglik += term;

        if (with_gradient) {
            ev.gradient.head(p) += ds_dbeta / scale;
            ev.gradient[p] += ds_dtau / scale - 1.0;
            for (std::size_t q = 0; q < q_count; ++q) {
                const double pi = std::exp(terms[q] - peak) / acc;
                const double t = rule.nodes[q];
                const double z = mode + scale * t;
                ev.gradient.head(p) +=
                    pi * (node_grad.col(static_cast<Index>(q)) + slope[q] * (dz_dbeta + t * ds_dbeta));
                ev.gradient[p] += pi * (z * z * inv_var + slope[q] * (dz_dtau + t * ds_dtau));
            }
        }
    }
    return ev;
}

double aghq_loglik(const GlmmDesign& design, const VectorXd& beta, double sigma, int nodes)
{
    return aghq_evaluate(design, beta, sigma, nodes, false).loglik;
}

// ─── Fitting ────────────────────────────────────────────────────────────────

namespace {

/// Log-likelihood and its gradient over theta = (beta[, log sigma]).
class GlmmObjective
{
public:
    GlmmObjective(const GlmmDesign& design, int nodes, std::optional<double> fixed_sigma)
        : design_(design), nodes_(nodes), fixed_sigma_(fixed_sigma)
    {
    }

    Index dimension() const { return design_.x.cols() + (fixed_sigma_ ? 0 : 1); }

    double sigma(const VectorXd& theta) const
    {
        return fixed_sigma_ ? *fixed_sigma_ : std::exp(theta[design_.x.cols()]);
    }

    double value(const VectorXd& theta) const
    {
        const VectorXd beta = theta.head(design_.x.cols());
        const double sd = sigma(theta);
        if (nodes_ == 1 || sd == 0.0)
            return laplace_loglik(design_, beta, sd);
        return aghq_loglik(design_, beta, sd, nodes_);
    }

    /// Returns the log-likelihood and fills its gradient.
    double value_and_gradient(const VectorXd& theta, VectorXd& grad) const
    {
        const Index p = design_.x.cols();
        grad.resize(dimension());
        const double sd = sigma(theta);
        const auto ev = nodes_ == 1 || sd == 0.0 ? laplace_evaluate(design_, theta.head(p), sd, true)
                                                 : aghq_evaluate(design_, theta.head(p), sd, nodes_, true);
        grad.head(p) = ev.gradient.head(p);
        if (!fixed_sigma_)
            grad[p] = ev.gradient[p];
        max_inner_ = std::max(max_inner_, ev.max_inner_iterations);
        return ev.loglik;
    }

    int max_inner() const { return max_inner_; }

private:
    const GlmmDesign& design_;
    int nodes_;
    std::optional<double> fixed_sigma_;
    mutable int max_inner_ = 0;
};

struct OuterResult
{
    VectorXd theta;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    std::string status;
};

OuterResult maximize(const GlmmObjective& obj, VectorXd theta0, const GlmmOptions& options, Index p)
{
    Objective f = [&obj](const VectorXd& x, VectorXd& grad) {
        const double ll = obj.value_and_gradient(x, grad);
        grad = -grad;
        return -ll;
    };
    VectorXd g0(obj.dimension());
    f(theta0, g0);

    LbfgsOptions lo;
    lo.max_iterations = options.max_iterations;
    lo.gradient_tolerance = options.gradient_tolerance;
    lo.relative_tolerance = options.relative_tolerance;
    lo.require_both = true;
    lo.noise_tolerance = 1e-12;
    lo.first_step = 1.0 / std::max(1.0, g0.lpNorm<Eigen::Infinity>());
    if (obj.dimension() > p) {
        VectorXd lb = VectorXd::Constant(obj.dimension(), -std::numeric_limits<double>::infinity());
        lb[p] = std::log(options.sigma_floor);
        lo.lower_bounds = lb;
    }
    const auto r = minimize_lbfgs(f, std::move(theta0), lo);
    return {r.x, -r.value, r.converged, r.iterations, r.status};
}

void check_rank(const GlmmDesign& design)
{
    Eigen::ColPivHouseholderQR<MatrixXd> qr(design.x);
    if (qr.rank() >= design.x.cols())
        return;
    // Columns taking part in some exact linear dependency.
    Eigen::JacobiSVD<MatrixXd> svd(design.x, Eigen::ComputeFullV);
    const MatrixXd null = svd.matrixV().rightCols(design.x.cols() - qr.rank());
    std::string names;
    for (Index j = 0; j < design.x.cols(); ++j) {
        if (null.row(j).cwiseAbs().maxCoeff() < 1e-8)
            continue;
        if (!names.empty())
            names += ", ";
        names += design.columns[static_cast<std::size_t>(j)].name;
    }
    throw ValidationError("GLMM design is rank deficient; collinear column(s): " + names);
}

} // namespace

GlmmFit fit_glmm(const GlmmDesign& design, const GlmmOptions& options)
{
    design.validate();
    if (design.cluster_count() < 2)
        throw ValidationError("GLMM needs at least 2 clusters");
    if (options.quadrature_nodes < 1)
        throw ValidationError("quadrature nodes must be >= 1");
    if (options.fixed_sigma && !(*options.fixed_sigma >= 0.0))
        throw ValidationError("fixed sigma must be >= 0");
    check_rank(design);

    const Index p = design.x.cols();
    VectorXd beta0 = VectorXd::Zero(p);
    for (Index j = 0; j < p; ++j)
        if (design.columns[static_cast<std::size_t>(j)].kind == ColumnKind::Intercept) {
            const double rate = std::clamp(design.successes.sum() / design.trials.sum(), 1e-6, 1.0 - 1e-6);
            beta0[j] = std::log(rate / (1.0 - rate));
        }

    GlmmFit fit;
    fit.quadrature_nodes = options.quadrature_nodes;
    for (const auto& c : design.columns)
        fit.names.push_back(c.name);

    std::optional<double> fixed = options.fixed_sigma;
    GlmmObjective obj(design, options.quadrature_nodes, fixed);
    VectorXd theta0 = beta0;
    if (!fixed) {
        theta0.conservativeResize(p + 1);
        theta0[p] = std::log(std::max(options.initial_sigma, options.sigma_floor));
    }
    auto outer = maximize(obj, theta0, options, p);
    fit.outer_iterations = outer.iterations;
    int max_inner = obj.max_inner();

    if (!fixed && std::exp(outer.theta[p]) < options.boundary_threshold) {
        // Singular fit: pin sigma at its floor and refit the fixed effects.
        fit.boundary = true;
        fixed = options.sigma_floor;
        GlmmObjective pinned(design, options.quadrature_nodes, fixed);
        auto again = maximize(pinned, outer.theta.head(p), options, p);
        fit.outer_iterations += again.iterations;
        max_inner = std::max(max_inner, pinned.max_inner());
        outer = std::move(again);
    }

    GlmmObjective final_obj(design, options.quadrature_nodes, fixed);
    fit.beta = outer.theta.head(p);
    fit.sigma = final_obj.sigma(outer.theta);
    fit.converged = outer.converged;
    fit.status = outer.status;

    // Standard errors from the numerical Hessian of the log-likelihood.
    const Index dim = final_obj.dimension();
    MatrixXd hessian(dim, dim);
    VectorXd g_up(dim), g_down(dim), probe = outer.theta;
    for (Index j = 0; j < dim; ++j) {
        const double h = 1e-4 * std::max(1.0, std::abs(outer.theta[j]));
        probe[j] = outer.theta[j] + h;
        final_obj.value_and_gradient(probe, g_up);
        probe[j] = outer.theta[j] - h;
        final_obj.value_and_gradient(probe, g_down);
        probe[j] = outer.theta[j];
        hessian.col(j) = (g_up - g_down) / (2.0 * h);
    }
    const MatrixXd info = -0.5 * (hessian + hessian.transpose());
    Eigen::LLT<MatrixXd> llt(info);
    fit.se = VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
    if (llt.info() == Eigen::Success) {
        const MatrixXd cov = llt.solve(MatrixXd::Identity(dim, dim));
        for (Index j = 0; j < p; ++j)
            if (cov(j, j) > 0.0)
                fit.se[j] = std::sqrt(cov(j, j));
    }

    const auto ev = laplace_evaluate(design, fit.beta, fit.sigma, false);
    fit.modes = ev.modes;
    fit.max_inner_iterations = std::max({max_inner, final_obj.max_inner(), ev.max_inner_iterations});
    fit.loglik = options.quadrature_nodes == 1 || fit.sigma == 0.0
                     ? ev.loglik
                     : aghq_loglik(design, fit.beta, fit.sigma, options.quadrature_nodes);
    return fit;
}

std::string GlmmFit::to_json() const
{
    nlohmann::ordered_json j;
    j["names"] = names;
    j["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
    auto se_json = nlohmann::ordered_json::array();
    for (Index i = 0; i < se.size(); ++i)
        se_json.push_back(std::isfinite(se[i]) ? nlohmann::ordered_json(se[i]) : nlohmann::ordered_json(nullptr));
    j["se"] = std::move(se_json);
    j["sigma"] = sigma;
    j["loglik"] = loglik;
    j["converged"] = converged;
    j["boundary"] = boundary;
    j["outer_iterations"] = outer_iterations;
    j["max_inner_iterations"] = max_inner_iterations;
    j["quadrature_nodes"] = quadrature_nodes;
    j["status"] = status;
    j["modes"] = modes;
    return j.dump(1) + "\n";
}

GlmmFit GlmmFit::from_json(std::string_view text)
{
    GlmmFit fit;
    try {
        const auto j = nlohmann::json::parse(text);
        fit.names = j.at("names").get<std::vector<std::string>>();
        const auto beta = j.at("beta").get<std::vector<double>>();
        const auto& se = j.at("se");
        if (beta.size() != fit.names.size() || se.size() != fit.names.size())
            throw ValidationError("fit report has inconsistent lengths");
        fit.beta = Eigen::Map<const VectorXd>(beta.data(), static_cast<Index>(beta.size()));
        fit.se.resize(static_cast<Index>(beta.size()));
        for (std::size_t i = 0; i < beta.size(); ++i)
            fit.se[static_cast<Index>(i)] = se[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : se[i].get<double>();
        fit.sigma = j.at("sigma");
        fit.loglik = j.at("loglik");
        fit.converged = j.at("converged");
        fit.boundary = j.at("boundary");
        fit.outer_iterations = j.at("outer_iterations");
        fit.max_inner_iterations = j.at("max_inner_iterations");
        fit.quadrature_nodes = j.at("quadrature_nodes");
        fit.status = j.at("status");
        fit.modes = j.at("modes").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed fit report: ") + e.what());
    }
    return fit;
}

// ─── Wald inference ─────────────────────────────────────────────────────────

double two_sided_normal_p(double z)
{
    const double p = std::erfc(std::abs(z) / std::numbers::sqrt2);
    return std::max(p, std::numeric_limits<double>::min());
}

OddsRatioRow wald_row(std::string name, double estimate, double se)
{
    OddsRatioRow row;
    row.name = std::move(name);
    row.estimate = estimate;
    row.odds_ratio = std::exp(estimate);
    if (std::isfinite(se) && se > 0.0) {
        row.se = se;
        row.lower = std::exp(estimate - kWaldQuantile * se);
        row.upper = std::exp(estimate + kWaldQuantile * se);
        row.p_value = two_sided_normal_p(estimate / se);
    } else {
        row.flagged = true;
    }
    return row;
}

OddsRatioTable wald_table(const GlmmFit& fit, const GlmmDesign& design)
{
    if (fit.beta.size() != design.x.cols())
        throw ValidationError("fit does not match design");
    OddsRatioTable t;
    for (Index j = 0; j < fit.beta.size(); ++j) {
        if (design.columns[static_cast<std::size_t>(j)].kind == ColumnKind::Intercept)
            continue;
        t.rows.push_back(wald_row(design.columns[static_cast<std::size_t>(j)].name, fit.beta[j], fit.se[j]));
    }
    return t;
}

} // namespace sentrend
