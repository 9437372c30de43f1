#pragma once

#include "sentrend/corpus.hpp"
#include "sentrend/gat.hpp"
#include "sentrend/glmm.hpp"
#include "sentrend/report.hpp"
#include "sentrend/stacker.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sentrend {

inline constexpr std::string_view kVersion = "1.0.0";

enum class Stage { Ingest, Graph, Sample, Score, Stack, Glmm, Report, All };

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

struct PipelineConfig
{
    // Inputs. Empty paths mean "not supplied".
    std::filesystem::path comments;
    std::filesystem::path covariates;
    std::filesystem::path embeddings;
    std::filesystem::path embedding_ids;
    std::filesystem::path upstream;      // msg_id,p_upstream
    std::filesystem::path labels;        // msg_id,label
    std::filesystem::path gat_params;
    std::filesystem::path stack_model;
    std::filesystem::path coordinates;   // school_id,lat,lon
    std::filesystem::path out = "out";

    Window window = Window::study();
    bool skip_malformed = false;
    bool drop_tombstones = false;

    std::size_t cap = 30000;
    std::size_t seed_batch = 50;
    std::uint64_t rng_seed = 0;
    unsigned jobs = 1;

    GatConfig gat;
    FeatureTransform stack_transform = FeatureTransform::Logit;
    double stack_threshold = 0.5;

    GlmmOptions glmm;
    ReferenceLevels reference = default_reference_levels();
    MapProjection projection;

    void validate() const;
    /// Canonical JSON of every field, used for the manifest hash.
    std::string canonical_json() const;
};

/// Parses "2019-2022" or "2019,2021".
std::set<int> parse_int_set(std::string_view text, std::string_view what);

struct StageReport
{
    std::vector<std::string> written;   // artifact paths
    std::vector<std::string> warnings;
};

/// Runs one stage (or all in order). Each stage reads the previous stage's
/// files under config.out. Throws ValidationError for bad input and
/// std::runtime_error for other failures; the message names the stage.
StageReport run_stage(Stage stage, const PipelineConfig& config);

} // namespace sentrend
