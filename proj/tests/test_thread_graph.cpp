#include "sentrend/thread_graph.hpp"

#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <set>

using namespace sentrend;

namespace {

Corpus corpus_of(const std::vector<RawComment>& comments) { return filter_window(comments, Window{{2020}, {9}}); }

constexpr std::int64_t kT = 1600171200;  // 2020-09-15

MessageGraph eight_node_graph()
{
    std::vector<std::string> ids;
    for (int i = 0; i < 8; ++i)
        ids.push_back("n" + std::to_string(i));
    return {"s", ids, {{1, 0}, {2, 0}, {3, 1}, {5, 4}, {6, 4}, {7, 6}}};
}

} // namespace

TEST_CASE("root with two replies")
{
    const auto c = corpus_of({{"r", "s", std::nullopt, kT, "root", 1},
                              {"a", "s", "r", kT + 1, "x", 2},
                              {"b", "s", "r", kT + 2, "y", 3}});
    const auto g = build_graph(c, "s");
    CHECK(g.node_count() == 3);
    CHECK(g.edge_count() == 2);
    CHECK(g.predecessors().degree(0) == 2);
    CHECK(g.successors().degree(0) == 0);
    CHECK(g.successors().degree(1) == 1);
    CHECK(g.index_of("b") == NodeIndex{2});
    CHECK_FALSE(g.index_of("zz").has_value());
}

TEST_CASE("chain is asymmetric")
{
    const auto c = corpus_of({{"a", "s", std::nullopt, kT, "", 1},
                              {"b", "s", "a", kT + 1, "", 1},
                              {"c", "s", "b", kT + 2, "", 1}});
    const auto g = build_graph(c, "s");
    CHECK(g.edges() == std::vector<Edge>{{1, 0}, {2, 1}});
    for (const auto& e : g.edges())
        CHECK(std::find(g.edges().begin(), g.edges().end(), Edge{e.parent, e.child}) == g.edges().end());
    CHECK(g.edge_list_text() == "b\ta\nc\tb\n");
    CHECK(g.node_manifest_text() == "0\ta\n1\tb\n2\tc\n");
}

TEST_CASE("parent outside the window leaves no edge")
{
    std::vector<RawComment> raw{{"old", "s", std::nullopt, kT - 40 * 86400, "", 1},
                                {"new", "s", "old", kT, "", 1},
                                {"other", "t", std::nullopt, kT, "", 1},
                                {"cross", "s", "other", kT + 5, "", 1}};
    const auto c = corpus_of(raw);
    const auto g = build_graph(c, "s");
    CHECK(g.node_count() == 2);
    CHECK(g.edge_count() == 0);
    CHECK(g.successors().degree(0) == 0);
    CHECK_THROWS_AS(build_graph(c, "missing"), ValidationError);
}

TEST_CASE("graph validation and text round trip")
{
    CHECK_THROWS_AS(MessageGraph("s", {"a", "b"}, {{0, 0}}), ValidationError);
    CHECK_THROWS_AS(MessageGraph("s", {"a", "b"}, {{0, 2}}), ValidationError);
    CHECK_THROWS_AS(MessageGraph("s", {"a", "a"}, {}), ValidationError);
    const MessageGraph dup("s", {"a", "b"}, {{1, 0}, {1, 0}});
    CHECK(dup.edge_count() == 1);

    const auto g = testing::random_forest_graph(200, 0.8, 3);
    const auto back = MessageGraph::from_text("s", g.node_manifest_text(), g.edge_list_text());
    CHECK(back.node_ids() == g.node_ids());
    CHECK(back.edges() == g.edges());
}

TEST_CASE("under-cap graph is returned whole")
{
    const auto g = testing::random_forest_graph(500, 0.7, 11);
    const auto s = sample_capped(g, 500, 50, 1);
    CHECK(s.nodes.size() == 500);
    CHECK(s.edges == g.edges());
    CHECK(s.trace.additions.empty());
    CHECK(s.trace.seed_batches.empty());
    const auto sub = s.as_graph(g);
    CHECK(sub.node_ids() == g.node_ids());
    CHECK(sub.edges() == g.edges());
}

TEST_CASE("eight-node hand trace")
{
    // Draws with seed 42: r = 6 of 8 free nodes, then r = 1 of 7.
    // Seeds n6, n1. BFS from n6 adds n4, n7; from n1 adds n0, after which the
    // cap of 5 is reached and n3 is cut.
    const auto g = eight_node_graph();
    const auto s = sample_capped(g, 5, 2, 42);
    CHECK(s.nodes == std::vector<NodeIndex>{0, 1, 4, 6, 7});
    REQUIRE(s.trace.additions.size() == 5);
    CHECK(s.trace.seed_batches == std::vector<std::vector<NodeIndex>>{{6, 1}});
    CHECK(s.trace.additions[2] == Addition{4, AdditionKind::Neighbor, 6, 0});
    CHECK(s.trace.additions[3] == Addition{7, AdditionKind::Neighbor, 6, 0});
    CHECK(s.trace.additions[4] == Addition{0, AdditionKind::Neighbor, 1, 0});
    CHECK(s.edges == std::vector<Edge>{{1, 0}, {6, 4}, {7, 6}});

    const auto t = sample_capped(g, 5, 2, 7);
    CHECK(t.nodes == std::vector<NodeIndex>{0, 1, 2, 6, 7});
}

TEST_CASE("fresh seed batches when the frontier dies out")
{
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i)
        ids.push_back(std::to_string(i));
    const MessageGraph isolated("s", ids, {});
    const auto s = sample_capped(isolated, 7, 3, 5);
    CHECK(s.nodes.size() == 7);
    CHECK(s.trace.seed_batches.size() == 3);
    CHECK(s.trace.seed_batches[2].size() == 1);
    for (const auto& a : s.trace.additions)
        CHECK(a.kind == AdditionKind::Seed);
}

TEST_CASE("sampler matches a naive replay")
{
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Xoshiro256 shape(seed + 1000);
        const auto n = 10 + shape.below(150);
        const auto g = testing::random_forest_graph(n, 0.3 + 0.6 * shape.uniform(), seed);
        const auto cap = 1 + shape.below(n - 1);
        const auto batch = 1 + shape.below(cap);
        const auto s = sample_capped(g, cap, batch, seed * 7 + 1);
        CHECK(s.trace.additions == testing::replay_sampler(g, cap, batch, seed * 7 + 1));
        CHECK(s.nodes.size() == cap);
    }
}

TEST_CASE("sampler properties")
{
    const auto g = testing::random_forest_graph(3000, 0.9, 77);
    const auto a = sample_capped(g, 1000, 50, 9);
    const auto b = sample_capped(g, 1000, 50, 9);
    const auto c = sample_capped(g, 1000, 50, 10);
    CHECK(a.nodes == b.nodes);
    CHECK(a.trace_json() == b.trace_json());
    CHECK(a.nodes != c.nodes);
    CHECK(std::is_sorted(a.nodes.begin(), a.nodes.end()));

    std::set<NodeIndex> chosen(a.nodes.begin(), a.nodes.end());
    CHECK(chosen.size() == 1000);
    std::vector<Edge> brute;
    for (const auto& e : g.edges())
        if (chosen.contains(e.child) && chosen.contains(e.parent))
            brute.push_back(e);
    CHECK(a.edges == brute);

    const auto sub = a.as_graph(g);
    CHECK(sub.node_count() == 1000);
    CHECK(sub.edge_count() == brute.size());
    for (const auto& e : sub.edges())
        CHECK(g.index_of(sub.node_ids()[e.parent]) == a.nodes[e.parent]);

    const auto j = nlohmann::json::parse(a.trace_json());
    CHECK(j.at("additions").size() == 1000);

    CHECK_THROWS_AS(sample_capped(g, 10, 20, 1), ValidationError);
    CHECK_THROWS_AS(sample_capped(g, 10, 0, 1), ValidationError);
}
