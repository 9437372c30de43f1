#include "sentrend/glmm.hpp"
#include "sentrend/io.hpp"
#include "sentrend/logistic.hpp"
#include "support.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <doctest.h>

#include <cfloat>

using namespace sentrend;

namespace {

GlmmDesign small_design()
{
    GlmmDesign d;
    d.x.resize(5, 2);
    d.x << 1, 0.5, 1, -1.0, 1, 1.2, 1, 0.0, 1, 2.0;
    d.successes = (Eigen::VectorXd(5) << 3, 1, 7, 0, 2).finished();
    d.trials = (Eigen::VectorXd(5) << 10, 4, 9, 5, 3).finished();
    d.cluster = {0, 0, 1, 2, 2};
    d.cluster_names = {"a", "b", "c"};
    d.columns = {{"(Intercept)", "(Intercept)", "", ColumnKind::Intercept}, {"x1", "x1", "", ColumnKind::Numeric}};
    d.validate();
    return d;
}

const Eigen::Vector2d kSmallBeta(-0.3, 0.4);

double plain_loglik(const GlmmDesign& d, const Eigen::VectorXd& beta)
{
    const Eigen::VectorXd eta = d.x * beta;
    double s = 0;
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        s += d.successes[i] * eta[i] - d.trials[i] * std::log1p(std::exp(eta[i]));
    return s;
}

SchoolCovariates school(std::string id, Region r, SchoolType t, bool d1, Cchie c, bool med, double base)
{
    SchoolCovariates s;
    s.school_id = std::move(id);
    s.region = r;
    s.school_type = t;
    s.d1 = d1;
    s.cchie = c;
    s.medical = med;
    s.city_population = base * 10;
    s.doctoral_programs = base + 3;
    s.tenure = 100 * base;
    s.enrollment = base * base;
    s.graduate_student = base / 2;
    s.selectivity = 0.1 * base;
    s.graduation_rate = 60 + base;
    return s;
}

} // namespace

TEST_CASE("zero sigma gives the ordinary logistic likelihood")
{
    const auto d = small_design();
    CHECK(laplace_loglik(d, kSmallBeta, 0.0) == doctest::Approx(plain_loglik(d, kSmallBeta)).epsilon(1e-14));

    Eigen::MatrixXd x(4, 2);
    x << 1, 0.1, 1, -0.4, 1, 2.0, 1, 0.7;
    const Eigen::Vector4d y(1, 0, 1, 0);
    const std::vector<int> cl{0, 1, 0, 1};
    const auto b = GlmmDesign::from_bernoulli(x, y, cl);
    CHECK(laplace_loglik(b, kSmallBeta, 0.0) == doctest::Approx(-0.5 * logistic_deviance(x, y, kSmallBeta)));
}

TEST_CASE("one-node quadrature equals the Laplace value")
{
    const auto d = small_design();
    for (double sigma : {0.1, 0.8, 2.5})
        CHECK(std::abs(aghq_loglik(d, kSmallBeta, sigma, 1) - laplace_loglik(d, kSmallBeta, sigma)) < 1e-12);
}

TEST_CASE("quadrature converges to the integration oracle")
{
    const auto d = small_design();
    CHECK(std::abs(aghq_loglik(d, kSmallBeta, 0.8, 50) - aghq_loglik(d, kSmallBeta, 0.8, 51)) < 1e-10);
    CHECK(aghq_loglik(d, kSmallBeta, 0.8, 25) == doctest::Approx(-19.275203109224).epsilon(1e-9));
    CHECK(aghq_loglik(d, kSmallBeta, 2.5, 25) == doctest::Approx(-20.758867324365).epsilon(1e-9));
    CHECK(std::abs(laplace_loglik(d, kSmallBeta, 0.8) - -19.275203109224) < 0.05);
}

TEST_CASE("gauss-hermite rule integrates polynomials exactly")
{
    const auto rule = gauss_hermite(10);
    double w = 0, t2 = 0, t4 = 0, t3 = 0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double t = rule.nodes[i];
        w += rule.weights[i];
        t2 += rule.weights[i] * t * t;
        t3 += rule.weights[i] * t * t * t;
        t4 += rule.weights[i] * t * t * t * t;
    }
    const double sp = std::sqrt(std::numbers::pi);
    CHECK(w == doctest::Approx(sp).epsilon(1e-13));
    CHECK(t2 == doctest::Approx(sp / 2).epsilon(1e-13));
    CHECK(std::abs(t3) < 1e-13);
    CHECK(t4 == doctest::Approx(3 * sp / 4).epsilon(1e-12));
}

TEST_CASE("quadrature agrees with monte carlo integration")
{
    // One cluster: log E_u[exp(g(u))] under u ~ N(0, sigma^2).
    GlmmDesign d = small_design();
    const double sigma = 0.8;
    Xoshiro256 rng(99);
    const int draws = 10'000'000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < draws; ++i) {
        const double u = sigma * testing::normal(rng);
        double g = 0;
        for (Eigen::Index r = 0; r < 2; ++r) {
            const double eta = kSmallBeta.dot(d.x.row(r)) + u;
            g += d.successes[r] * eta - d.trials[r] * std::log1p(std::exp(eta));
        }
        const double v = std::exp(g);
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum2 / draws - mean * mean) / draws);

    GlmmDesign first;
    first.x = d.x.topRows(2);
    first.successes = d.successes.head(2);
    first.trials = d.trials.head(2);
    first.cluster = {0, 0};
    first.cluster_names = {"a"};
    first.columns = d.columns;
    const double exact = std::exp(aghq_loglik(first, kSmallBeta, sigma, 30));
    CHECK(std::abs(exact - mean) < 3 * se);
}

TEST_CASE("balanced clusters have zero modes")
{
    GlmmDesign d;
    d.x = Eigen::MatrixXd::Ones(3, 1);
    d.successes = Eigen::Vector3d(5, 10, 1);
    d.trials = Eigen::Vector3d(10, 20, 2);
    d.cluster = {0, 1, 2};
    d.cluster_names = {"a", "b", "c"};
    d.columns = {{"(Intercept)", "(Intercept)", "", ColumnKind::Intercept}};
    const auto e = laplace_evaluate(d, Eigen::VectorXd::Zero(1), 0.7);
    for (double m : e.modes)
        CHECK(std::abs(m) < 1e-12);
    CHECK(e.max_inner_iterations <= 2);
}

TEST_CASE("likelihood ignores cluster order and covariate scale")
{
    const auto d = small_design();
    GlmmDesign p;
    p.x.resize(5, 2);
    p.x << 1, 0.0, 1, 2.0, 1, 1.2, 1, 0.5, 1, -1.0;
    p.successes = (Eigen::VectorXd(5) << 0, 2, 7, 3, 1).finished();
    p.trials = (Eigen::VectorXd(5) << 5, 3, 9, 10, 4).finished();
    p.cluster = {0, 0, 1, 2, 2};
    p.cluster_names = {"c", "b", "a"};
    p.columns = d.columns;
    CHECK(laplace_loglik(p, kSmallBeta, 0.9) == doctest::Approx(laplace_loglik(d, kSmallBeta, 0.9)).epsilon(1e-13));

    GlmmDesign s = d;
    s.x.col(1) *= 4.0;
    const Eigen::Vector2d sb(kSmallBeta[0], kSmallBeta[1] / 4.0);
    CHECK(laplace_loglik(s, sb, 0.9) == doctest::Approx(laplace_loglik(d, kSmallBeta, 0.9)).epsilon(1e-13));
    CHECK(aghq_loglik(s, sb, 0.9, 9) == doctest::Approx(aghq_loglik(d, kSmallBeta, 0.9, 9)).epsilon(1e-13));
}

TEST_CASE("laplace gradient matches finite differences")
{
    const auto d = small_design();
    const double sigma = 0.8;
    const auto e = laplace_evaluate(d, kSmallBeta, sigma);
    const double h = 1e-5;
    for (int j = 0; j < 2; ++j) {
        Eigen::Vector2d up = kSmallBeta, down = kSmallBeta;
        up[j] += h;
        down[j] -= h;
        const double fd = (laplace_loglik(d, up, sigma) - laplace_loglik(d, down, sigma)) / (2 * h);
        CHECK(e.gradient[j] == doctest::Approx(fd).epsilon(1e-6));
    }
    const double fd = (laplace_loglik(d, kSmallBeta, sigma * std::exp(h)) -
                       laplace_loglik(d, kSmallBeta, sigma * std::exp(-h))) / (2 * h);
    CHECK(e.gradient[2] == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("quadrature gradient matches finite differences")
{
    const auto d = small_design();
    for (int nodes : {1, 5, 25}) {
        const auto e = aghq_evaluate(d, kSmallBeta, 0.8, nodes);
        CHECK(e.loglik == doctest::Approx(aghq_loglik(d, kSmallBeta, 0.8, nodes)));
        const double h = 1e-5;
        for (int j = 0; j < 2; ++j) {
            Eigen::Vector2d up = kSmallBeta, down = kSmallBeta;
            up[j] += h;
            down[j] -= h;
            const double fd = (aghq_loglik(d, up, 0.8, nodes) - aghq_loglik(d, down, 0.8, nodes)) / (2 * h);
            CHECK(e.gradient[j] == doctest::Approx(fd).epsilon(1e-6));
        }
        const double fd = (aghq_loglik(d, kSmallBeta, 0.8 * std::exp(h), nodes) -
                           aghq_loglik(d, kSmallBeta, 0.8 * std::exp(-h), nodes)) / (2 * h);
        CHECK(e.gradient[2] == doctest::Approx(fd).epsilon(1e-6));
    }
    const auto lap = laplace_evaluate(d, kSmallBeta, 0.8);
    CHECK((aghq_evaluate(d, kSmallBeta, 0.8, 1).gradient - lap.gradient).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inner mode-finding stays short on simulated data")
{
    testing::Simulation s;
    s.clusters = 32;
    s.per_cluster = 200;
    const auto d = testing::simulate(s);
    const auto e = laplace_evaluate(d, Eigen::Vector2d(s.beta0, s.beta1), s.sigma);
    CHECK(e.max_inner_iterations <= 50);
    CHECK(e.modes.size() == 32);
}

TEST_CASE("laplace error shrinks as clusters grow")
{
    std::vector<double> gaps;
    for (int n : {100, 1000, 10000}) {
        testing::Simulation s;
        s.clusters = 16;
        s.per_cluster = n;
        s.seed = 5;
        const auto d = testing::simulate(s);
        const Eigen::Vector2d beta(s.beta0, s.beta1);
        gaps.push_back(std::abs(laplace_loglik(d, beta, s.sigma) - aghq_loglik(d, beta, s.sigma, 25)) / 16.0);
    }
    CHECK(gaps[1] < gaps[0]);
    CHECK(gaps[2] < gaps[1]);
}

TEST_CASE("fit recovers simulated parameters")
{
    testing::Simulation s;
    s.clusters = 48;
    s.per_cluster = 300;
    s.seed = 17;
    const auto d = testing::simulate(s);
    const auto fit = fit_glmm(d);
    CHECK(fit.converged);
    CHECK_FALSE(fit.boundary);
    CHECK(std::abs(fit.beta[0] - s.beta0) < 4 * fit.se[0]);
    CHECK(std::abs(fit.beta[1] - s.beta1) < 4 * fit.se[1]);
    CHECK(fit.sigma == doctest::Approx(s.sigma).epsilon(0.4));

    const auto back = GlmmFit::from_json(fit.to_json());
    CHECK(back.beta == fit.beta);
    CHECK(back.se == fit.se);
    CHECK(back.sigma == fit.sigma);
    CHECK(back.names == fit.names);
    CHECK(back.to_json() == fit.to_json());
}

TEST_CASE("balanced intercept-only data hits the boundary")
{
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(64 * 100, 1);
    Eigen::VectorXd y(64 * 100);
    std::vector<int> cl(64 * 100);
    for (int i = 0; i < 64 * 100; ++i) {
        y[i] = i % 2;
        cl[static_cast<std::size_t>(i)] = i / 100;
    }
    const auto fit = fit_glmm(GlmmDesign::from_bernoulli(x, y, cl));
    CHECK(std::abs(fit.beta[0]) < 1e-6);
    CHECK(fit.boundary);
    CHECK(fit.sigma <= 1e-4);
    CHECK(std::isfinite(fit.se[0]));
}

TEST_CASE("fixed tiny sigma reproduces ordinary logistic regression")
{
    testing::Simulation s;
    s.clusters = 20;
    s.per_cluster = 50;
    s.seed = 3;
    const auto d = testing::simulate(s);
    GlmmOptions o;
    o.fixed_sigma = 1e-8;
    const auto fit = fit_glmm(d, o);

    Eigen::VectorXd y(static_cast<Eigen::Index>(d.trials.sum()));
    Eigen::MatrixXd x(y.size(), 2);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < d.x.rows(); ++i)
        for (int t = 0; t < static_cast<int>(d.trials[i]); ++t, ++r) {
            x.row(r) = d.x.row(i);
            y[r] = t < static_cast<int>(d.successes[i]) ? 1 : 0;
        }
    const auto irls = fit_logistic_irls(x, y);
    CHECK((fit.beta - irls.coefficients).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("rank deficient designs are rejected with the column names")
{
    auto d = small_design();
    d.x.conservativeResize(Eigen::NoChange, 3);
    d.x.col(2) = 2.0 * d.x.col(1);
    d.columns.push_back({"x2", "x2", "", ColumnKind::Numeric});
    try {
        fit_glmm(d);
        FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("x2") != std::string::npos);
    }
}

TEST_CASE("design construction codes a toy table")
{
    const std::vector<SchoolCovariates> cov{
        school("sA", Region::West, SchoolType::Public, false, Cchie::DoctoralHigh, false, 1.0),
        school("sB", Region::Midwest, SchoolType::Private, true, Cchie::BaccalaureateOrMasters, true, 2.0),
        school("sC", Region::South, SchoolType::Public, false, Cchie::DoctoralVeryHigh, false, 6.0),
    };
    const std::vector<ClassifiedMessage> msgs{
        {"1", "sA", 2019, true}, {"2", "sA", 2019, false}, {"3", "sA", 2020, true}, {"4", "sB", 2019, false},
        {"5", "sC", 2020, true}, {"6", "sC", 2020, true},  {"7", "sD", 2019, true},
    };
    const auto d = build_design(msgs, cov);
    std::vector<std::string> names;
    for (const auto& c : d.columns)
        names.push_back(c.name);
    const std::vector<std::string> expected{"(Intercept)", "region:South", "region:West", "type:Private", "year:2020",
                                            "d1:Yes", "cchie:DoctoralHigh", "cchie:DoctoralVeryHigh", "medical:Yes",
                                            "city_population", "enrollment", "doctoral_programs", "tenure",
                                            "graduate_student", "selectivity", "graduation_rate"};
    CHECK(names == expected);
    CHECK(d.cluster_names == std::vector<std::string>{"sA", "sB", "sC"});
    CHECK(d.dropped_schools == std::vector<std::string>{"sD"});
    CHECK(d.cluster == std::vector<int>{0, 0, 1, 2});
    CHECK(d.successes == Eigen::Vector4d(1, 1, 0, 2));
    CHECK(d.trials == Eigen::Vector4d(2, 1, 1, 2));

    Eigen::MatrixXd head(4, 9);
    head << 1, 0, 1, 0, 0, 0, 1, 0, 0,
            1, 0, 1, 0, 1, 0, 1, 0, 0,
            1, 0, 0, 1, 0, 1, 0, 0, 1,
            1, 1, 0, 0, 1, 0, 0, 1, 0;
    CHECK(d.x.leftCols(9) == head);

    // One row per school: standardized columns have mean 0 and SD 1.
    const std::array<Eigen::Index, 3> school_rows{0, 2, 3};
    for (Eigen::Index j = 9; j < d.x.cols(); ++j) {
        double m = 0, ss = 0;
        for (auto r : school_rows)
            m += d.x(r, j) / 3.0;
        for (auto r : school_rows)
            ss += (d.x(r, j) - m) * (d.x(r, j) - m);
        CHECK(std::abs(m) < 1e-12);
        CHECK(std::sqrt(ss / 2.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(d.columns[10].mean == doctest::Approx((1.0 + 4.0 + 36.0) / 3.0));
}

TEST_CASE("reference level overrides and errors")
{
    const std::vector<SchoolCovariates> cov{
        school("sA", Region::West, SchoolType::Public, false, Cchie::DoctoralHigh, false, 1.0),
        school("sB", Region::Midwest, SchoolType::Private, true, Cchie::BaccalaureateOrMasters, true, 2.0),
    };
    const std::vector<ClassifiedMessage> msgs{{"1", "sA", 2019, true}, {"2", "sB", 2020, false}};
    const auto d = build_design(msgs, cov, {{"region", "West"}, {"year", "2020"}});
    CHECK(d.columns[1].name == "region:Midwest");
    CHECK(d.columns[1].reference == "West");
    CHECK(d.columns[3].name == "year:2019");
    CHECK_THROWS_AS(build_design(msgs, cov, {{"region", "Atlantis"}}), ValidationError);
    CHECK_THROWS_AS(build_design(msgs, cov, {{"colour", "red"}}), ValidationError);
    CHECK_THROWS_AS(build_design(msgs, cov, {{"year", "2018"}}), ValidationError);
    CHECK_THROWS_AS(build_design(std::span(msgs).first(1), cov), ValidationError);
}

TEST_CASE("binary design encoding round trips")
{
    testing::Simulation s;
    s.clusters = 5;
    s.per_cluster = 7;
    auto d = testing::simulate(s);
    d.dropped_schools = {"zz"};
    const auto bytes = d.encode();
    CHECK(bytes.substr(0, 6) == "GLMD1\n");
    const auto back = GlmmDesign::decode(bytes);
    CHECK(back.x == d.x);
    CHECK(back.successes == d.successes);
    CHECK(back.trials == d.trials);
    CHECK(back.cluster == d.cluster);
    CHECK(back.cluster_names == d.cluster_names);
    CHECK(back.dropped_schools == d.dropped_schools);
    CHECK(back.encode() == bytes);
    CHECK_THROWS_AS(GlmmDesign::decode(bytes.substr(0, bytes.size() - 3)), ValidationError);
    CHECK_THROWS_AS(GlmmDesign::decode("GLMD2\n" + bytes.substr(6)), ValidationError);
}

TEST_CASE("wald rows")
{
    const auto r = wald_row("x", 0.0, 1.0);
    CHECK(r.odds_ratio == 1.0);
    CHECK(*r.lower == doctest::Approx(0.14086349).epsilon(1e-7));
    CHECK(*r.upper == doctest::Approx(7.0990715).epsilon(1e-7));
    CHECK(*r.p_value == 1.0);
    CHECK_FALSE(r.flagged);

    const auto f = wald_row("y", 0.3, 0.0);
    CHECK(f.flagged);
    CHECK_FALSE(f.p_value.has_value());
    CHECK(f.odds_ratio == doctest::Approx(std::exp(0.3)));
    CHECK(wald_row("z", 1.0, std::nan("")).flagged);
}

TEST_CASE("normal tail probabilities match a high-precision oracle")
{
    using Big = boost::multiprecision::cpp_dec_float_50;
    for (double z : {0.0, 0.3, 1.0, 1.959964, 2.5, 4.0, 6.0, 8.5, 12.0, 25.0}) {
        const Big exact = boost::math::erfc(Big(z) / boost::multiprecision::sqrt(Big(2)));
        const double p = two_sided_normal_p(z);
        CHECK(std::abs(p - exact.convert_to<double>()) / exact.convert_to<double>() < 1e-12);
        CHECK(two_sided_normal_p(-z) == p);
    }
    CHECK(two_sided_normal_p(1.959964) == doctest::Approx(0.05).epsilon(1e-6));
    CHECK(two_sided_normal_p(40.0) == DBL_MIN);
}
