#pragma once

#include "sentrend/glmm.hpp"
#include "sentrend/rng.hpp"
#include "sentrend/thread_graph.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace testing {

inline double normal(sentrend::Xoshiro256& rng)
{
    // Box-Muller on (0, 1] so the log is finite.
    const double u = 1.0 - rng.uniform();
    const double v = rng.uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

inline double sigmoid(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

struct Simulation
{
    int clusters = 128;
    int per_cluster = 1000;
    double beta0 = -1.0;
    double beta1 = 0.5;
    double sigma = 0.5;
    std::uint64_t seed = 1;
};

/// Random-intercept logistic data with one standard-normal covariate.
inline sentrend::GlmmDesign simulate(const Simulation& s)
{
    sentrend::Xoshiro256 rng(s.seed);
    const auto n = static_cast<Eigen::Index>(s.clusters) * s.per_cluster;
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    std::vector<int> cluster(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (int k = 0; k < s.clusters; ++k) {
        const double z = s.sigma * normal(rng);
        for (int i = 0; i < s.per_cluster; ++i, ++row) {
            x(row, 0) = 1.0;
            x(row, 1) = normal(rng);
            y[row] = rng.uniform() < sigmoid(s.beta0 + s.beta1 * x(row, 1) + z) ? 1.0 : 0.0;
            cluster[static_cast<std::size_t>(row)] = k;
        }
    }
    return sentrend::GlmmDesign::from_bernoulli(x, y, cluster);
}

/// Random graph with `n` nodes where each node after the first replies to an
/// earlier node with probability `attach`.
inline sentrend::MessageGraph random_forest_graph(std::size_t n, double attach, std::uint64_t seed)
{
    sentrend::Xoshiro256 rng(seed);
    std::vector<std::string> ids;
    std::vector<sentrend::Edge> edges;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back("m" + std::to_string(i));
        if (i > 0 && rng.uniform() < attach)
            edges.push_back({static_cast<sentrend::NodeIndex>(i), static_cast<sentrend::NodeIndex>(rng.below(i))});
    }
    return {"school", std::move(ids), std::move(edges)};
}

/// Straightforward re-implementation of the sampling rules with linear scans.
inline std::vector<sentrend::Addition> replay_sampler(const sentrend::MessageGraph& g, std::size_t cap,
                                                      std::size_t batch, std::uint64_t seed)
{
    const auto n = g.node_count();
    std::vector<std::set<sentrend::NodeIndex>> adj(n);
    for (const auto& e : g.edges()) {
        adj[e.child].insert(e.parent);
        adj[e.parent].insert(e.child);
    }
    sentrend::Xoshiro256 rng(seed);
    std::vector<bool> sel(n, false);
    std::vector<sentrend::NodeIndex> queue;
    std::vector<sentrend::Addition> out;
    std::size_t head = 0;
    std::uint32_t batches = 0;
    while (out.size() < cap) {
        if (head == queue.size()) {
            ++batches;
            const auto k = std::min(batch, cap - out.size());
            for (std::size_t d = 0; d < k; ++d) {
                std::vector<sentrend::NodeIndex> free;
                for (sentrend::NodeIndex v = 0; v < n; ++v)
                    if (!sel[v])
                        free.push_back(v);
                const auto v = free[rng.below(free.size())];
                sel[v] = true;
                queue.push_back(v);
                out.push_back({v, sentrend::AdditionKind::Seed, v, batches - 1});
            }
            continue;
        }
        const auto u = queue[head++];
        for (auto v : adj[u]) {
            if (sel[v])
                continue;
            sel[v] = true;
            queue.push_back(v);
            out.push_back({v, sentrend::AdditionKind::Neighbor, u, batches - 1});
            if (out.size() == cap)
                break;
        }
    }
    return out;
}

} // namespace testing
