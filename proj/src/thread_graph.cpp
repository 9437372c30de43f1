#include "sentrend/thread_graph.hpp"

#include "sentrend/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <sstream>

namespace sentrend {

namespace {

Adjacency make_adjacency(std::size_t n, const std::vector<std::pair<NodeIndex, NodeIndex>>& pairs)
{
    Adjacency adj;
    adj.offsets.assign(n + 1, 0);
    for (const auto& [from, _] : pairs)
        ++adj.offsets[from + 1];
    for (std::size_t i = 0; i < n; ++i)
        adj.offsets[i + 1] += adj.offsets[i];
    adj.targets.resize(pairs.size());
    auto cursor = adj.offsets;
    for (const auto& [from, to] : pairs)
        adj.targets[cursor[from]++] = to;
    for (std::size_t i = 0; i < n; ++i) {
        auto b = adj.targets.begin() + static_cast<std::ptrdiff_t>(adj.offsets[i]);
        auto e = adj.targets.begin() + static_cast<std::ptrdiff_t>(adj.offsets[i + 1]);
        std::sort(b, e);
    }
    return adj;
}

std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = text.size();
        auto line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (!line.empty())
            lines.push_back(line);
        pos = nl + 1;
    }
    return lines;
}

} // namespace

MessageGraph::MessageGraph(std::string school_id, std::vector<std::string> node_ids, std::vector<Edge> edges)
    : school_id_(std::move(school_id)), node_ids_(std::move(node_ids))
{
    const auto n = node_ids_.size();
    index_.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!index_.emplace(node_ids_[i], static_cast<NodeIndex>(i)).second)
            throw ValidationError("duplicate node id " + node_ids_[i]);

    std::vector<std::pair<NodeIndex, NodeIndex>> seen;
    seen.reserve(edges.size());
    for (const auto& e : edges) {
        if (e.child >= n || e.parent >= n)
            throw ValidationError("edge references a missing node");
        if (e.child == e.parent)
            throw ValidationError("self-edge on node " + node_ids_[e.child]);
        seen.emplace_back(e.child, e.parent);
    }
    // Collapse duplicates while keeping first-occurrence order.
    std::vector<std::pair<NodeIndex, NodeIndex>> sorted = seen;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        std::vector<std::pair<NodeIndex, NodeIndex>> uniq;
        std::vector<bool> emitted(sorted.size(), false);
        for (const auto& p : seen) {
            auto it = std::lower_bound(sorted.begin(), sorted.end(), p);
            auto k = static_cast<std::size_t>(it - sorted.begin());
            if (!emitted[k]) {
                emitted[k] = true;
                uniq.push_back(p);
            }
        }
        seen = std::move(uniq);
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    }
    edges_.reserve(seen.size());
    for (const auto& [c, p] : seen)
        edges_.push_back({c, p});

    out_ = make_adjacency(n, seen);
    std::vector<std::pair<NodeIndex, NodeIndex>> reversed;
    reversed.reserve(seen.size());
    for (const auto& [c, p] : seen)
        reversed.emplace_back(p, c);
    in_ = make_adjacency(n, reversed);

    std::vector<std::pair<NodeIndex, NodeIndex>> both = seen;
    both.insert(both.end(), reversed.begin(), reversed.end());
    std::sort(both.begin(), both.end());
    both.erase(std::unique(both.begin(), both.end()), both.end());
    undirected_ = make_adjacency(n, both);
}

std::optional<NodeIndex> MessageGraph::index_of(const std::string& msg_id) const
{
    auto it = index_.find(msg_id);
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

std::string MessageGraph::edge_list_text() const
{
    std::string out;
    for (const auto& e : edges_) {
        out += node_ids_[e.child];
        out += '\t';
        out += node_ids_[e.parent];
        out += '\n';
    }
    return out;
}

std::string MessageGraph::node_manifest_text() const
{
    std::string out;
    for (std::size_t i = 0; i < node_ids_.size(); ++i) {
        out += std::to_string(i);
        out += '\t';
        out += node_ids_[i];
        out += '\n';
    }
    return out;
}

MessageGraph MessageGraph::from_text(std::string school_id, std::string_view node_manifest, std::string_view edge_list)
{
    std::vector<std::string> ids;
    std::unordered_map<std::string, NodeIndex> index;
    for (auto line : split_lines(node_manifest)) {
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos)
            throw ValidationError("node manifest line without tab: " + std::string(line));
        std::size_t idx = 0;
        auto [ptr, ec] = std::from_chars(line.data(), line.data() + tab, idx);
        if (ec != std::errc() || ptr != line.data() + tab || idx != ids.size())
            throw ValidationError("node manifest index out of sequence at " + std::string(line));
        ids.emplace_back(line.substr(tab + 1));
        index.emplace(ids.back(), static_cast<NodeIndex>(idx));
    }
    std::vector<Edge> edges;
    for (auto line : split_lines(edge_list)) {
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos)
            throw ValidationError("edge line without tab: " + std::string(line));
        auto c = index.find(std::string(line.substr(0, tab)));
        auto p = index.find(std::string(line.substr(tab + 1)));
        if (c == index.end() || p == index.end())
            throw ValidationError("edge references unknown node: " + std::string(line));
        edges.push_back({c->second, p->second});
    }
    return MessageGraph(std::move(school_id), std::move(ids), std::move(edges));
}

MessageGraph build_graph(const Corpus& corpus, const std::string& school_id)
{
    if (!corpus.has_school(school_id))
        throw ValidationError("unknown school " + school_id);
    const auto rows = corpus.school_messages(school_id);
    const auto& msgs = corpus.messages();
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    std::unordered_map<std::string_view, NodeIndex> index;
    index.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ids.push_back(msgs[rows[i]].msg_id);
        index.emplace(msgs[rows[i]].msg_id, static_cast<NodeIndex>(i));
    }
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& parent = msgs[rows[i]].parent_id;
        if (!parent)
            continue;
        if (auto it = index.find(*parent); it != index.end())
            edges.push_back({static_cast<NodeIndex>(i), it->second});
    }
    return MessageGraph(school_id, std::move(ids), std::move(edges));
}

// ─── Capped sampling ────────────────────────────────────────────────────────

namespace {

/// Fenwick tree over 0/1 "still unselected" flags with k-th-one lookup.
class UnselectedSet
{
public:
    explicit UnselectedSet(std::size_t n) : tree_(n + 1, 0), size_(n), remaining_(n)
    {
        for (std::size_t i = 1; i <= n; ++i) {
            tree_[i] += 1;
            const auto j = i + (i & (~i + 1));
            if (j <= n)
                tree_[j] += tree_[i];
        }
        top_ = 1;
        while (top_ * 2 <= n)
            top_ *= 2;
    }

    std::size_t remaining() const { return remaining_; }

    void erase(std::size_t i)
    {
        for (auto k = i + 1; k <= size_; k += k & (~k + 1))
            tree_[k] -= 1;
        --remaining_;
    }

    /// Index of the (r+1)-th remaining element in ascending order.
    std::size_t kth(std::size_t r) const
    {
        std::size_t pos = 0;
        std::size_t rem = r + 1;
        for (auto step = top_; step > 0; step >>= 1) {
            const auto next = pos + step;
            if (next <= size_ && tree_[next] < rem) {
                pos = next;
                rem -= tree_[next];
            }
        }
        return pos;  // 1-based pos + 1 minus 1
    }

private:
    std::vector<std::size_t> tree_;
    std::size_t size_;
    std::size_t remaining_;
    std::size_t top_ = 1;
};

} // namespace

SampledSubgraph sample_capped(const MessageGraph& graph, std::size_t cap, std::size_t seed_batch, std::uint64_t rng_seed)
{
    if (seed_batch < 1 || cap < seed_batch)
        throw ValidationError("sampler requires cap >= seed_batch >= 1");

    SampledSubgraph sub;
    sub.school_id = graph.school_id();
    sub.parent_node_count = graph.node_count();
    sub.cap = cap;
    sub.seed_batch = seed_batch;
    sub.rng_seed = rng_seed;

    const auto n = graph.node_count();
    if (n <= cap) {
        sub.nodes.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            sub.nodes[i] = static_cast<NodeIndex>(i);
        sub.edges = graph.edges();
        return sub;
    }

    Xoshiro256 rng(rng_seed);
    UnselectedSet pool(n);
    std::vector<bool> selected(n, false);
    std::vector<NodeIndex> queue;
    queue.reserve(cap);
    std::size_t head = 0;
    auto& trace = sub.trace;
    trace.additions.reserve(cap);

    auto select = [&](NodeIndex v, AdditionKind kind, NodeIndex via) {
        selected[v] = true;
        pool.erase(v);
        queue.push_back(v);
        trace.additions.push_back({v, kind, via, static_cast<std::uint32_t>(trace.seed_batches.size() - 1)});
    };

    const auto& adj = graph.undirected();
    while (trace.additions.size() < cap) {
        if (head == queue.size()) {
            const auto k = std::min(seed_batch, cap - trace.additions.size());
            trace.seed_batches.emplace_back();
            for (std::size_t d = 0; d < k; ++d) {
                const auto r = rng.below(pool.remaining());
                const auto v = static_cast<NodeIndex>(pool.kth(r));
                trace.seed_batches.back().push_back(v);
                select(v, AdditionKind::Seed, v);
            }
            continue;
        }
        const NodeIndex u = queue[head++];
        for (NodeIndex v : adj.row(u)) {
            if (selected[v])
                continue;
            select(v, AdditionKind::Neighbor, u);
            if (trace.additions.size() == cap)
                break;
        }
    }

    sub.nodes.reserve(cap);
    for (const auto& a : trace.additions)
        sub.nodes.push_back(a.node);
    std::sort(sub.nodes.begin(), sub.nodes.end());
    sub.edges = induced_edges(graph, sub.nodes);
    return sub;
}

std::vector<Edge> induced_edges(const MessageGraph& graph, std::span<const NodeIndex> selected)
{
    std::vector<bool> in(graph.node_count(), false);
    for (auto v : selected)
        in[v] = true;
    std::vector<Edge> out;
    for (const auto& e : graph.edges())
        if (in[e.child] && in[e.parent])
            out.push_back(e);
    return out;
}

MessageGraph SampledSubgraph::as_graph(const MessageGraph& parent) const
{
    std::vector<std::string> ids;
    ids.reserve(nodes.size());
    std::vector<NodeIndex> remap(parent.node_count(), 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        ids.push_back(parent.node_ids()[nodes[i]]);
        remap[nodes[i]] = static_cast<NodeIndex>(i);
    }
    std::vector<Edge> local;
    local.reserve(edges.size());
    for (const auto& e : edges)
        local.push_back({remap[e.child], remap[e.parent]});
    return MessageGraph(school_id, std::move(ids), std::move(local));
}

std::string SampledSubgraph::trace_json() const
{
    nlohmann::ordered_json j;
    j["school_id"] = school_id;
    j["parent_node_count"] = parent_node_count;
    j["selected_node_count"] = nodes.size();
    j["cap"] = cap;
    j["seed_batch"] = seed_batch;
    j["rng_seed"] = rng_seed;
    j["rng"] = "xoshiro256** seeded by splitmix64";
    j["seed_batches"] = trace.seed_batches;
    auto adds = nlohmann::ordered_json::array();
    for (const auto& a : trace.additions)
        adds.push_back({a.node, a.kind == AdditionKind::Seed ? "seed" : "neighbor", a.via, a.batch});
    j["additions"] = std::move(adds);
    return j.dump() + "\n";
}

} // namespace sentrend
