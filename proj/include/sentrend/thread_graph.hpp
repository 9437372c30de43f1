#pragma once

#include "sentrend/corpus.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sentrend {

using NodeIndex = std::uint32_t;

struct Edge
{
    NodeIndex child;   // the reply
    NodeIndex parent;  // the message replied to

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Compressed sparse rows over node indices.
struct Adjacency
{
    std::vector<std::size_t> offsets;  // size n + 1
    std::vector<NodeIndex> targets;

    std::span<const NodeIndex> row(NodeIndex i) const
    {
        return {targets.data() + offsets[i], offsets[i + 1] - offsets[i]};
    }
    std::size_t degree(NodeIndex i) const { return offsets[i + 1] - offsets[i]; }
};

/// Directed reply graph of one school. Node i is the i-th message in
/// appearance order; an edge points from a reply to its parent. Immutable
/// once built.
class MessageGraph
{
public:
    MessageGraph() = default;

    /// Validates that edges reference existing nodes and are not self-loops.
    /// Duplicate edges are collapsed.
    MessageGraph(std::string school_id, std::vector<std::string> node_ids, std::vector<Edge> edges);

    const std::string& school_id() const { return school_id_; }
    std::size_t node_count() const { return node_ids_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    const std::vector<std::string>& node_ids() const { return node_ids_; }
    const std::vector<Edge>& edges() const { return edges_; }

    /// child -> parents (the message(s) a node replies to)
    const Adjacency& successors() const { return out_; }
    /// parent -> children (replies received)
    const Adjacency& predecessors() const { return in_; }
    /// Union of both directions, each row sorted by appearance index.
    const Adjacency& undirected() const { return undirected_; }

    std::optional<NodeIndex> index_of(const std::string& msg_id) const;

    /// child<TAB>parent per line, in edge order.
    std::string edge_list_text() const;
    /// index<TAB>msg_id per line.
    std::string node_manifest_text() const;

    static MessageGraph from_text(std::string school_id, std::string_view node_manifest, std::string_view edge_list);

private:
    std::string school_id_;
    std::vector<std::string> node_ids_;
    std::unordered_map<std::string, NodeIndex> index_;
    std::vector<Edge> edges_;
    Adjacency out_;
    Adjacency in_;
    Adjacency undirected_;
};

/// One node per windowed message of the school; an edge for every
/// parent_id that resolves inside the school. Unresolved parents leave the
/// node without an outgoing edge.
MessageGraph build_graph(const Corpus& corpus, const std::string& school_id);

// ─── Capped sampling ────────────────────────────────────────────────────────

enum class AdditionKind { Seed, Neighbor };

struct Addition
{
    NodeIndex node;
    AdditionKind kind;
    /// For neighbor additions, the already-selected node whose neighbor list
    /// produced this node. Equal to `node` for seeds.
    NodeIndex via;
    std::uint32_t batch;  // seed batch in force when the node was added

    friend bool operator==(const Addition&, const Addition&) = default;
};

struct SamplingTrace
{
    std::vector<std::vector<NodeIndex>> seed_batches;
    std::vector<Addition> additions;  // every selected node, in order
};

struct SampledSubgraph
{
    std::string school_id;
    std::size_t parent_node_count = 0;
    std::vector<NodeIndex> nodes;  // parent indices, ascending
    std::vector<Edge> edges;       // induced edges, parent indices, parent edge order
    SamplingTrace trace;           // empty when the whole graph fits
    std::size_t cap = 0;
    std::size_t seed_batch = 0;
    std::uint64_t rng_seed = 0;

    /// Standalone graph over the selected nodes, in parent appearance order.
    MessageGraph as_graph(const MessageGraph& parent) const;

    std::string trace_json() const;
};

/// Seeded BFS sampling down to exactly `cap` nodes:
///   1. draw `seed_batch` unselected nodes uniformly (the r-th unselected
///      node in appearance order, r = rng.below(#unselected));
///   2. breadth-first growth from the queued nodes over undirected
///      adjacency, neighbors visited in appearance order;
///   3. when the queue empties, draw a fresh batch;
///   4. any batch or neighbor run that would overshoot is truncated to the
///      first (cap - |selected|) nodes.
/// Graphs with node_count <= cap are returned whole with an empty trace.
SampledSubgraph sample_capped(const MessageGraph& graph, std::size_t cap, std::size_t seed_batch,
                              std::uint64_t rng_seed);

/// Parent edges with both endpoints in `selected` (sorted ascending).
std::vector<Edge> induced_edges(const MessageGraph& graph, std::span<const NodeIndex> selected);

} // namespace sentrend
