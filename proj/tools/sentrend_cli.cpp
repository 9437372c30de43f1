#include "sentrend/io.hpp"
#include "sentrend/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace sentrend;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sentiment trend pipeline: ingest, graph, sample, score, stack, glmm, report"};
    app.set_version_flag("--version", std::string(kVersion));
    app.set_config("--config", "", "INI/TOML configuration file; command-line flags take precedence");
    app.require_subcommand(1, 1);
    app.fallthrough();

    PipelineConfig cfg;
    std::string years = "2019-2022";
    std::string months = "8-11";
    std::string on_malformed = "abort";
    std::string gat_mode = "successors";
    std::string transform = "logit";
    std::vector<std::string> reference;
    std::vector<double> map_bounds;
    std::optional<std::uint64_t> gat_seed;

    app.add_option("--comments", cfg.comments, "Comments JSONL");
    app.add_option("--covariates", cfg.covariates, "School covariates CSV");
    app.add_option("--embeddings", cfg.embeddings, "EMB1 embedding file");
    app.add_option("--embedding-ids", cfg.embedding_ids, "Row id manifest for the embedding file");
    app.add_option("--upstream", cfg.upstream, "Upstream probabilities CSV (msg_id,p_upstream)");
    app.add_option("--labels", cfg.labels, "Training labels CSV (msg_id,label)");
    app.add_option("--gat-params", cfg.gat_params, "Trained GAT parameters (JSON)");
    app.add_option("--stack-model", cfg.stack_model, "Trained stack model (JSON)");
    app.add_option("--coordinates", cfg.coordinates, "School coordinates CSV (school_id,lat,lon)");
    app.add_option("--out", cfg.out, "Output directory")->capture_default_str();

    app.add_option("--years", years, "Window years, e.g. 2019-2022 or 2019,2021")->capture_default_str();
    app.add_option("--months", months, "Window months, e.g. 8-11")->capture_default_str();
    app.add_option("--on-malformed", on_malformed, "abort or skip malformed comment records")
        ->check(CLI::IsMember({"abort", "skip"}))
        ->capture_default_str();
    app.add_flag("--drop-tombstones", cfg.drop_tombstones, "Exclude [deleted]/[removed] comments at ingest");

    app.add_option("--cap", cfg.cap, "Sampler node cap per school")->capture_default_str();
    app.add_option("--seed-batch", cfg.seed_batch, "Seeds drawn per sampler batch")->capture_default_str();
    app.add_option("--rng-seed", cfg.rng_seed, "Master RNG seed")->capture_default_str();
    app.add_option("--jobs", cfg.jobs, "Per-school worker threads")->capture_default_str();

    app.add_option("--gat-layers", cfg.gat.layers, "GAT layers including the output layer")->capture_default_str();
    app.add_option("--gat-heads", cfg.gat.hidden_heads, "GAT hidden-layer heads")->capture_default_str();
    app.add_option("--gat-hidden", cfg.gat.hidden_dim, "GAT per-head hidden size")->capture_default_str();
    app.add_option("--gat-output-heads", cfg.gat.output_heads, "GAT output heads")->capture_default_str();
    app.add_option("--gat-mode", gat_mode, "Attention neighborhood: successors, predecessors or both")
        ->check(CLI::IsMember({"successors", "predecessors", "both"}))
        ->capture_default_str();
    app.add_option("--gat-epochs", cfg.gat.max_epochs, "GAT training iterations")->capture_default_str();
    app.add_option("--gat-lr", cfg.gat.learning_rate, "GAT first step length")->capture_default_str();
    app.add_option("--gat-seed", gat_seed, "GAT initialization seed (defaults to --rng-seed)");

    app.add_option("--stack-transform", transform, "Stacker feature transform: logit or identity")
        ->check(CLI::IsMember({"logit", "identity"}))
        ->capture_default_str();
    app.add_option("--stack-threshold", cfg.stack_threshold, "Negative class threshold")->capture_default_str();

    app.add_option("--glmm-nodes", cfg.glmm.quadrature_nodes, "1 = Laplace, >1 = adaptive Gauss-Hermite")
        ->capture_default_str();
    app.add_option("--glmm-reltol", cfg.glmm.relative_tolerance, "Relative log-likelihood tolerance")
        ->capture_default_str();
    app.add_option("--glmm-gradtol", cfg.glmm.gradient_tolerance, "Gradient max-norm tolerance")
        ->capture_default_str();
    app.add_option("--glmm-max-iter", cfg.glmm.max_iterations, "Outer iteration budget")->capture_default_str();
    app.add_option("--reference", reference, "Reference level override, e.g. region=South (repeatable)");
    app.add_option("--map-bounds", map_bounds, "lon_min lon_max lat_min lat_max for map figures")->expected(4);

    std::optional<Stage> stage;
    for (auto s : {Stage::Ingest, Stage::Graph, Stage::Sample, Stage::Score, Stage::Stack, Stage::Glmm, Stage::Report,
                   Stage::All}) {
        auto* sub = app.add_subcommand(std::string(to_string(s)));
        sub->callback([&stage, s] { stage = s; });
    }
    app.get_subcommand("ingest")->description("Parse, window and validate comments and covariates");
    app.get_subcommand("graph")->description("Build per-school reply graphs");
    app.get_subcommand("sample")->description("Draw capped subgraphs");
    app.get_subcommand("score")->description("GAT probabilities for sampled messages");
    app.get_subcommand("stack")->description("Combine GAT and upstream probabilities");
    app.get_subcommand("glmm")->description("Fit the random-intercept logistic model");
    app.get_subcommand("report")->description("Shares, odds-ratio table and figures");
    app.get_subcommand("all")->description("Run every stage in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        cfg.window.years = parse_int_set(years, "year");
        cfg.window.months.clear();
        for (int m : parse_int_set(months, "month")) {
            if (m < 1 || m > 12)
                throw ValidationError("month out of range: " + std::to_string(m));
            cfg.window.months.insert(static_cast<unsigned>(m));
        }
        cfg.skip_malformed = on_malformed == "skip";
        cfg.gat.mode = attention_mode_from_string(gat_mode);
        cfg.gat.init_seed = gat_seed.value_or(cfg.rng_seed);
        cfg.stack_transform = feature_transform_from_string(transform);
        for (const auto& r : reference) {
            const auto eq = r.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ValidationError("reference override must look like variable=level: " + r);
            cfg.reference[r.substr(0, eq)] = r.substr(eq + 1);
        }
        if (!map_bounds.empty()) {
            cfg.projection.lon_min = map_bounds[0];
            cfg.projection.lon_max = map_bounds[1];
            cfg.projection.lat_min = map_bounds[2];
            cfg.projection.lat_max = map_bounds[3];
        }

        const auto report = run_stage(*stage, cfg);
        for (const auto& w : report.warnings)
            std::cerr << "warning: " << w << "\n";
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
