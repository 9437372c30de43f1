#include "sentrend/pipeline.hpp"

#include "sentrend/embeddings.hpp"
#include "sentrend/io.hpp"
#include "sentrend/rng.hpp"
#include "sentrend/thread_graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace sentrend {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string_view to_string(Stage s)
{
    switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Graph: return "graph";
    case Stage::Sample: return "sample";
    case Stage::Score: return "score";
    case Stage::Stack: return "stack";
    case Stage::Glmm: return "glmm";
    case Stage::Report: return "report";
    case Stage::All: return "all";
    }
    return "?";
}

Stage stage_from_string(std::string_view s)
{
    for (auto st : {Stage::Ingest, Stage::Graph, Stage::Sample, Stage::Score, Stage::Stack, Stage::Glmm,
                    Stage::Report, Stage::All})
        if (to_string(st) == s)
            return st;
    throw ValidationError("unknown stage " + std::string(s));
}

std::set<int> parse_int_set(std::string_view text, std::string_view what)
{
    auto to_int = [&](std::string_view s) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size())
            throw ValidationError("bad " + std::string(what) + " value '" + std::string(s) + "'");
        return v;
    };
    std::set<int> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = std::min(text.find(',', start), text.size());
        const auto item = text.substr(start, comma - start);
        const auto dash = item.find('-', 1);
        if (dash != std::string_view::npos) {
            const int lo = to_int(item.substr(0, dash));
            const int hi = to_int(item.substr(dash + 1));
            if (hi < lo)
                throw ValidationError("empty " + std::string(what) + " range '" + std::string(item) + "'");
            for (int v = lo; v <= hi; ++v)
                out.insert(v);
        } else {
            out.insert(to_int(item));
        }
        start = comma + 1;
    }
    return out;
}

void PipelineConfig::validate() const
{
    if (window.years.empty() || window.months.empty())
        throw ValidationError("window needs at least one year and one month");
    for (unsigned m : window.months)
        if (m < 1 || m > 12)
            throw ValidationError("month out of range: " + std::to_string(m));
    if (seed_batch < 1)
        throw ValidationError("seed batch must be >= 1");
    if (cap < seed_batch)
        throw ValidationError("cap must be >= seed batch");
    if (jobs < 1)
        throw ValidationError("jobs must be >= 1");
    if (out.empty())
        throw ValidationError("output directory must be set");
    gat.validate();
    if (!(stack_threshold > 0.0 && stack_threshold < 1.0))
        throw ValidationError("stack threshold must lie in (0,1)");
    if (glmm.quadrature_nodes < 1 || glmm.max_iterations < 1 || !(glmm.relative_tolerance > 0.0)
        || !(glmm.gradient_tolerance > 0.0))
        throw ValidationError("GLMM tolerances, iteration budget and quadrature nodes must be positive");
    const auto defaults = default_reference_levels();
    for (const auto& [k, v] : reference)
        if (!defaults.contains(k))
            throw ValidationError("unknown categorical variable in reference levels: " + k);
    if (!(projection.lon_max > projection.lon_min && projection.lat_max > projection.lat_min
          && projection.width > 2 * projection.margin && projection.height > 2 * projection.margin))
        throw ValidationError("map projection bounds are degenerate");
}

std::string PipelineConfig::canonical_json() const
{
    ordered_json j;
    j["comments"] = comments.string();
    j["covariates"] = covariates.string();
    j["embeddings"] = embeddings.string();
    j["embedding_ids"] = embedding_ids.string();
    j["upstream"] = upstream.string();
    j["labels"] = labels.string();
    j["gat_params"] = gat_params.string();
    j["stack_model"] = stack_model.string();
    j["coordinates"] = coordinates.string();
    j["years"] = window.years;
    j["months"] = window.months;
    j["skip_malformed"] = skip_malformed;
    j["drop_tombstones"] = drop_tombstones;
    j["cap"] = cap;
    j["seed_batch"] = seed_batch;
    j["rng_seed"] = rng_seed;
    j["gat"] = {{"layers", gat.layers},
                {"hidden_heads", gat.hidden_heads},
                {"hidden_dim", gat.hidden_dim},
                {"output_heads", gat.output_heads},
                {"negative_slope", gat.negative_slope},
                {"learning_rate", gat.learning_rate},
                {"max_epochs", gat.max_epochs},
                {"tolerance", gat.tolerance},
                {"mode", to_string(gat.mode)},
                {"init_seed", gat.init_seed}};
    j["stack"] = {{"transform", to_string(stack_transform)}, {"threshold", stack_threshold}};
    j["glmm"] = {{"relative_tolerance", glmm.relative_tolerance},
                 {"gradient_tolerance", glmm.gradient_tolerance},
                 {"max_iterations", glmm.max_iterations},
                 {"sigma_floor", glmm.sigma_floor},
                 {"boundary_threshold", glmm.boundary_threshold},
                 {"quadrature_nodes", glmm.quadrature_nodes},
                 {"reference", reference}};
    j["projection"] = {{"lon", {projection.lon_min, projection.lon_max}},
                       {"lat", {projection.lat_min, projection.lat_max}},
                       {"size", {projection.width, projection.height}},
                       {"margin", projection.margin}};
    return j.dump();
}

namespace {

/// Collects a stage's inputs and outputs, then writes everything at once.
class StageIo
{
public:
    StageIo(Stage stage, const PipelineConfig& config)
        : stage_(stage), config_(config), dir_(config.out / std::string(to_string(stage)))
    {
    }

    const fs::path& dir() const { return dir_; }

    std::string read(const fs::path& path)
    {
        if (!fs::exists(path))
            throw std::runtime_error("missing input " + path.string());
        auto text = read_file(path);
        const auto rel = fs::weakly_canonical(path).lexically_relative(fs::weakly_canonical(config_.out));
        const bool inside = !rel.empty() && *rel.begin() != "..";
        inputs_[(inside ? rel : path).generic_string()] = sha256_hex(text);
        return text;
    }

    bool exists(const fs::path& path) const { return fs::exists(path); }

    void output(const std::string& name, std::string content) { outputs_[name] = std::move(content); }

    void warn(std::string w) { report_.warnings.push_back(std::move(w)); }

    StageReport commit()
    {
        ordered_json outputs = ordered_json::object();
        for (const auto& [name, content] : outputs_) {
            write_file_atomic(dir_ / name, content);
            outputs[name] = sha256_hex(content);
            report_.written.push_back((dir_ / name).string());
        }
        ordered_json m;
        m["stage"] = to_string(stage_);
        m["version"] = kVersion;
        m["config_hash"] = sha256_hex(config_.canonical_json());
        m["rng_seed"] = config_.rng_seed;
        m["inputs"] = inputs_;
        m["outputs"] = std::move(outputs);
        write_file_atomic(dir_ / "manifest.json", m.dump(1) + "\n");
        report_.written.push_back((dir_ / "manifest.json").string());
        return std::move(report_);
    }

private:
    Stage stage_;
    const PipelineConfig& config_;
    fs::path dir_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
    StageReport report_;
};

template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn fn)
{
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(jobs, count); ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& th : pool)
        th.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

std::vector<std::string> lines_of(std::string_view text)
{
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (!line.empty())
            out.push_back(line);
    }
    return out;
}

/// Reads a CSV whose first line must equal `header`.
std::vector<std::vector<std::string>> read_table(std::string_view text, std::string_view header, std::string_view what)
{
    auto lines = lines_of(text);
    if (lines.empty() || lines.front() != header)
        throw ValidationError(std::string(what) + ": header must be " + std::string(header));
    const auto width = csv::split(header).size();
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto f = csv::split(lines[i]);
        if (f.size() != width)
            throw ValidationError(std::string(what) + " line " + std::to_string(i + 1) + ": expected "
                                  + std::to_string(width) + " fields");
        rows.push_back(std::move(f));
    }
    return rows;
}

double parse_probability(const std::string& s, std::string_view what)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !(v >= 0.0 && v <= 1.0))
        throw ValidationError(std::string(what) + ": bad probability '" + s + "'");
    return v;
}

std::map<std::string, int> load_labels(const std::string& text)
{
    std::map<std::string, int> out;
    for (const auto& row : read_table(text, "msg_id,label", "labels")) {
        if (row[1] != "0" && row[1] != "1")
            throw ValidationError("labels: label for " + row[0] + " must be 0 or 1");
        if (!out.emplace(row[0], row[1] == "1").second)
            throw ValidationError("labels: duplicate msg_id " + row[0]);
    }
    return out;
}

constexpr std::string_view kPredictionHeader = "msg_id,school_id,year,p_gat,p_upstream,p_stacked,class";

std::string school_file(std::size_t k)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "school_%04zu", k);
    return buf;
}

struct SchoolEntry
{
    std::string file;
    std::string school_id;
};

std::vector<SchoolEntry> read_school_index(std::string_view text)
{
    std::vector<SchoolEntry> out;
    auto lines = lines_of(text);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::vector<std::string> f;
        std::string_view rest = lines[i];
        for (std::size_t tab; (tab = rest.find('\t')) != std::string_view::npos; rest.remove_prefix(tab + 1))
            f.emplace_back(rest.substr(0, tab));
        f.emplace_back(rest);
        if (f.size() < 2)
            throw ValidationError("malformed school index line " + std::to_string(i + 1));
        out.push_back({f[0], f[1]});
    }
    return out;
}

// ─── Stages ─────────────────────────────────────────────────────────────────

fs::path stage_dir(const PipelineConfig& c, Stage s) { return c.out / std::string(to_string(s)); }

Corpus load_ingested(StageIo& io, const PipelineConfig& c)
{
    const auto text = io.read(stage_dir(c, Stage::Ingest) / "comments.jsonl");
    const auto parsed = parse_comments(text);
    return filter_window(parsed.comments, c.window);
}

StageReport run_ingest(const PipelineConfig& c)
{
    StageIo io(Stage::Ingest, c);
    if (c.comments.empty())
        throw ValidationError("no comments file given (--comments)");
    auto parsed = parse_comments(io.read(c.comments), c.skip_malformed ? OnMalformed::Skip : OnMalformed::Abort);
    for (const auto& d : parsed.diagnostics)
        io.warn(d);
    if (c.drop_tombstones)
        std::erase_if(parsed.comments, [](const RawComment& r) { return r.is_tombstone(); });
    const auto corpus = filter_window(parsed.comments, c.window);

    std::string jsonl = serialize_comments(corpus.messages());
    if (!jsonl.empty())
        jsonl += '\n';
    io.output("comments.jsonl", std::move(jsonl));

    std::map<std::pair<std::string, int>, std::size_t> counts;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        ++counts[{corpus.messages()[i].school_id, corpus.year(i)}];
    std::string counts_csv = "school,year,n\n";
    for (const auto& [key, n] : counts)
        counts_csv += csv::join({key.first, std::to_string(key.second), std::to_string(n)}) + "\n";
    io.output("message_counts.csv", std::move(counts_csv));

    if (!c.covariates.empty()) {
        const auto rows = load_covariates(io.read(c.covariates));
        io.output("covariates.csv", serialize_covariates(rows));
        io.output("descriptive.csv", descriptive_stats(rows).to_csv());
    }
    return io.commit();
}

StageReport run_graph(const PipelineConfig& c)
{
    StageIo io(Stage::Graph, c);
    const auto corpus = load_ingested(io, c);
    const auto schools = corpus.schools();
    std::vector<MessageGraph> graphs(schools.size());
    parallel_for(schools.size(), c.jobs, [&](std::size_t k) { graphs[k] = build_graph(corpus, schools[k]); });

    std::string index = "file\tschool_id\tnodes\tedges\n";
    for (std::size_t k = 0; k < schools.size(); ++k) {
        const auto file = school_file(k);
        index += file + "\t" + schools[k] + "\t" + std::to_string(graphs[k].node_count()) + "\t"
               + std::to_string(graphs[k].edge_count()) + "\n";
        io.output(file + ".nodes.tsv", graphs[k].node_manifest_text());
        io.output(file + ".edges.tsv", graphs[k].edge_list_text());
    }
    io.output("schools.tsv", std::move(index));
    return io.commit();
}

std::vector<std::pair<SchoolEntry, MessageGraph>> load_graphs(StageIo& io, const fs::path& dir)
{
    const auto index = read_school_index(io.read(dir / "schools.tsv"));
    std::vector<std::pair<SchoolEntry, MessageGraph>> out;
    for (const auto& e : index) {
        auto nodes = io.read(dir / (e.file + ".nodes.tsv"));
        auto edges = io.read(dir / (e.file + ".edges.tsv"));
        out.emplace_back(e, MessageGraph::from_text(e.school_id, nodes, edges));
    }
    return out;
}

StageReport run_sample(const PipelineConfig& c)
{
    StageIo io(Stage::Sample, c);
    const auto graphs = load_graphs(io, stage_dir(c, Stage::Graph));
    std::vector<SampledSubgraph> samples(graphs.size());
    std::vector<std::uint64_t> seeds(graphs.size());
    for (std::size_t k = 0; k < graphs.size(); ++k) {
        std::uint64_t s = c.rng_seed + k;
        seeds[k] = Xoshiro256::splitmix64(s);
    }
    parallel_for(graphs.size(), c.jobs, [&](std::size_t k) {
        samples[k] = sample_capped(graphs[k].second, c.cap, c.seed_batch, seeds[k]);
    });

    std::string index = "file\tschool_id\tparent_nodes\tnodes\tedges\trng_seed\n";
    for (std::size_t k = 0; k < graphs.size(); ++k) {
        const auto& [entry, graph] = graphs[k];
        const auto sub = samples[k].as_graph(graph);
        index += entry.file + "\t" + entry.school_id + "\t" + std::to_string(graph.node_count()) + "\t"
               + std::to_string(sub.node_count()) + "\t" + std::to_string(sub.edge_count()) + "\t"
               + std::to_string(seeds[k]) + "\n";
        io.output(entry.file + ".nodes.tsv", sub.node_manifest_text());
        io.output(entry.file + ".edges.tsv", sub.edge_list_text());
        io.output(entry.file + ".trace.json", samples[k].trace_json());
    }
    io.output("schools.tsv", std::move(index));
    return io.commit();
}

StageReport run_score(const PipelineConfig& c)
{
    StageIo io(Stage::Score, c);
    const auto graphs = load_graphs(io, stage_dir(c, Stage::Sample));

    // Subgraphs are disjoint, so one union graph gives the same forward pass.
    std::vector<std::string> ids;
    std::vector<Edge> edges;
    for (const auto& [entry, g] : graphs) {
        const auto base = static_cast<NodeIndex>(ids.size());
        ids.insert(ids.end(), g.node_ids().begin(), g.node_ids().end());
        for (const auto& e : g.edges())
            edges.push_back({e.child + base, e.parent + base});
    }
    const MessageGraph all("all", ids, std::move(edges));

    std::string out = "msg_id,p_gat\n";
    if (all.node_count() > 0) {
        if (c.embeddings.empty() || c.embedding_ids.empty())
            throw ValidationError("scoring needs --embeddings and --embedding-ids");
        const auto emb = EmbeddingMatrix::decode(io.read(c.embeddings), io.read(c.embedding_ids));
        const auto features = emb.gather(ids);

        GatParams params;
        if (!c.gat_params.empty()) {
            params = GatParams::from_json(io.read(c.gat_params));
            if (params.input_dim != features.cols())
                throw ValidationError("GAT parameters expect input dimension " + std::to_string(params.input_dim)
                                      + ", embeddings have " + std::to_string(features.cols()));
        } else if (!c.labels.empty()) {
            const auto labels = load_labels(io.read(c.labels));
            std::vector<std::uint8_t> y(ids.size(), 0), mask(ids.size(), 0);
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (auto it = labels.find(ids[i]); it != labels.end()) {
                    y[i] = static_cast<std::uint8_t>(it->second);
                    mask[i] = 1;
                }
            if (std::count(mask.begin(), mask.end(), 1) == 0)
                throw ValidationError("no labeled message is present in the sampled graphs");
            auto trained = gat_train(c.gat, all, features, y, mask);
            if (!trained.converged)
                io.warn("GAT training stopped before convergence after " + std::to_string(trained.epochs)
                        + " epochs");
            params = std::move(trained.params);
            io.output("gat_params.json", params.to_json());
        } else {
            throw ValidationError("scoring needs --gat-params or --labels");
        }
        const auto probs = gat_forward(params, all, features);
        for (std::size_t i = 0; i < probs.msg_ids.size(); ++i)
            out += csv::join({probs.msg_ids[i], format_double(probs.p_negative[i])}) + "\n";
    }
    io.output("p_gat.csv", std::move(out));
    return io.commit();
}

StageReport run_stack(const PipelineConfig& c)
{
    StageIo io(Stage::Stack, c);
    const auto gat_rows = read_table(io.read(stage_dir(c, Stage::Score) / "p_gat.csv"), "msg_id,p_gat", "p_gat.csv");

    std::string out = std::string(kPredictionHeader) + "\n";
    if (!gat_rows.empty()) {
        const auto corpus = load_ingested(io, c);
        std::unordered_map<std::string, std::size_t> where;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            where.emplace(corpus.messages()[i].msg_id, i);

        if (c.upstream.empty())
            throw ValidationError("stacking needs --upstream probabilities");
        std::unordered_map<std::string, double> upstream;
        for (const auto& row : read_table(io.read(c.upstream), "msg_id,p_upstream", "upstream probabilities"))
            if (!upstream.emplace(row[0], parse_probability(row[1], "upstream probabilities")).second)
                throw ValidationError("upstream probabilities: duplicate msg_id " + row[0]);

        std::vector<StackObservation> obs;
        for (const auto& row : gat_rows) {
            auto it = upstream.find(row[0]);
            if (it == upstream.end())
                throw ValidationError("no upstream probability for message " + row[0]);
            obs.push_back({row[0], parse_probability(row[1], "p_gat.csv"), it->second, std::nullopt});
        }

        StackModel model;
        if (!c.stack_model.empty()) {
            model = StackModel::from_json(io.read(c.stack_model));
        } else if (!c.labels.empty()) {
            const auto labels = load_labels(io.read(c.labels));
            for (auto& o : obs)
                if (auto it = labels.find(o.msg_id); it != labels.end())
                    o.label = it->second;
            const auto fit = fit_stack(obs, c.stack_transform, c.stack_threshold);
            if (fit.separated)
                io.warn("stacker training data are separable; coefficients are not finite MLEs");
            model = fit.model;
            io.output("model.json", model.to_json());
        } else {
            throw ValidationError("stacking needs --stack-model or --labels");
        }
        for (const auto& o : obs) {
            auto it = where.find(o.msg_id);
            if (it == where.end())
                throw ValidationError("scored message " + o.msg_id + " is not in the ingested corpus");
            const auto p = predict_stack(model, o.p_gat, o.p_upstream);
            out += csv::join({o.msg_id, corpus.messages()[it->second].school_id, std::to_string(corpus.year(it->second)),
                              format_double(o.p_gat), format_double(o.p_upstream), format_double(p.p_negative),
                              p.negative ? "1" : "0"})
                 + "\n";
        }
    }
    io.output("predictions.csv", std::move(out));
    return io.commit();
}

std::vector<ClassifiedMessage> load_classified(StageIo& io, const PipelineConfig& c)
{
    const auto rows = read_table(io.read(stage_dir(c, Stage::Stack) / "predictions.csv"), kPredictionHeader,
                                 "predictions.csv");
    std::vector<ClassifiedMessage> out;
    for (const auto& row : rows) {
        int year = 0;
        auto [ptr, ec] = std::from_chars(row[2].data(), row[2].data() + row[2].size(), year);
        if (ec != std::errc() || ptr != row[2].data() + row[2].size() || (row[6] != "0" && row[6] != "1"))
            throw ValidationError("predictions.csv: malformed row for " + row[0]);
        out.push_back({row[0], row[1], year, row[6] == "1"});
    }
    return out;
}

StageReport run_glmm(const PipelineConfig& c)
{
    StageIo io(Stage::Glmm, c);
    const auto messages = load_classified(io, c);
    if (messages.empty()) {
        io.warn("no classified messages; GLMM skipped");
        return io.commit();
    }
    const auto cov_path = stage_dir(c, Stage::Ingest) / "covariates.csv";
    if (!io.exists(cov_path))
        throw ValidationError("GLMM needs school covariates (ingest with --covariates)");
    const auto covariates = load_covariates(io.read(cov_path));
    const auto design = build_design(messages, covariates, c.reference);
    for (const auto& s : design.dropped_schools)
        io.warn("school " + s + " dropped from the GLMM: incomplete covariates");
    const auto fit = fit_glmm(design, c.glmm);
    if (!fit.converged)
        io.warn("GLMM did not converge: " + fit.status);
    if (fit.boundary)
        io.warn("random-intercept SD at its lower boundary");
    io.output("design.glmd", design.encode());
    io.output("fit.json", fit.to_json());
    io.output("odds_ratios.csv", adjust_table(wald_table(fit, design)).to_csv());
    return io.commit();
}

StageReport run_report(const PipelineConfig& c)
{
    StageIo io(Stage::Report, c);
    const auto messages = load_classified(io, c);
    const auto shares = negative_share(messages);
    for (const auto& s : shares.missing_baseline)
        io.warn("school " + s + " has no " + std::to_string(shares.baseline_year) + " messages; no differences");

    std::optional<AdjustedTable> table;
    const auto glmm_dir = stage_dir(c, Stage::Glmm);
    if (io.exists(glmm_dir / "fit.json")) {
        const auto design = GlmmDesign::decode(io.read(glmm_dir / "design.glmd"));
        const auto fit = GlmmFit::from_json(io.read(glmm_dir / "fit.json"));
        table = adjust_table(wald_table(fit, design));
    }
    CoordinateMap coords;
    if (!c.coordinates.empty())
        coords = load_coordinates(io.read(c.coordinates));

    auto figures = emit_figures(shares, table ? &*table : nullptr, coords, c.projection);
    for (auto& w : figures.warnings)
        io.warn(std::move(w));
    for (auto& [name, content] : figures.files)
        io.output(name, std::move(content));
    return io.commit();
}

} // namespace

StageReport run_stage(Stage stage, const PipelineConfig& config)
{
    config.validate();
    if (stage == Stage::All) {
        StageReport total;
        for (auto s : {Stage::Ingest, Stage::Graph, Stage::Sample, Stage::Score, Stage::Stack, Stage::Glmm,
                       Stage::Report}) {
            auto r = run_stage(s, config);
            total.written.insert(total.written.end(), r.written.begin(), r.written.end());
            total.warnings.insert(total.warnings.end(), r.warnings.begin(), r.warnings.end());
        }
        return total;
    }
    const std::string tag = "[" + std::string(to_string(stage)) + "] ";
    auto run = [&]() -> StageReport {
        switch (stage) {
        case Stage::Ingest: return run_ingest(config);
        case Stage::Graph: return run_graph(config);
        case Stage::Sample: return run_sample(config);
        case Stage::Score: return run_score(config);
        case Stage::Stack: return run_stack(config);
        case Stage::Glmm: return run_glmm(config);
        case Stage::Report: return run_report(config);
        case Stage::All: break;
        }
        return {};
    };
    try {
        auto r = run();
        for (auto& w : r.warnings)
            w = tag + w;
        return r;
    } catch (const ValidationError& e) {
        throw ValidationError(tag + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(tag + e.what());
    }
}

} // namespace sentrend
