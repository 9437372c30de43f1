#pragma once

#include "sentrend/glmm.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sentrend {

// ─── Multiple testing ───────────────────────────────────────────────────────

struct NamedP
{
    std::string name;
    double p = 1.0;

    bool operator==(const NamedP&) const = default;
};

using PValueSet = std::vector<NamedP>;

/// Names unique, values in (0, 1].
void validate_pvalues(const PValueSet& set);

/// Benjamini-Hochberg step-up adjustment, returned in input order. Tied raw
/// values are ranked in input order.
PValueSet bh_adjust(const PValueSet& set);
std::vector<double> bh_adjust(std::span<const double> p);

// ─── Negative shares ────────────────────────────────────────────────────────

struct ShareCell
{
    std::string school_id;
    int year = 0;
    std::size_t messages = 0;
    std::size_t negatives = 0;

    double share() const { return messages == 0 ? 0.0 : static_cast<double>(negatives) / static_cast<double>(messages); }
};

struct ShareDiff
{
    std::string school_id;
    int year = 0;
    double baseline_share = 0.0;
    double share = 0.0;
    double points = 0.0;  // (share - baseline_share) * 100
};

struct NegativeShareTable
{
    int baseline_year = 2019;
    std::vector<ShareCell> cells;  // sorted by (school, year)
    std::vector<ShareDiff> diffs;  // non-baseline years of schools with a baseline
    std::vector<std::string> missing_baseline;

    std::vector<int> years() const;
    std::size_t total_messages() const;
};

NegativeShareTable negative_share(std::span<const ClassifiedMessage> messages, int baseline_year = 2019);

// ─── Figures ────────────────────────────────────────────────────────────────

struct LatLon
{
    double lat = 0.0;
    double lon = 0.0;
};

using CoordinateMap = std::map<std::string, LatLon>;

/// CSV with header school_id,lat,lon.
CoordinateMap load_coordinates(std::string_view text);

/// Affine map of a lat/lon box onto an SVG canvas; north is up.
struct MapProjection
{
    double lon_min = -125.0;
    double lon_max = -66.0;
    double lat_min = 24.0;
    double lat_max = 50.0;
    double width = 800.0;
    double height = 500.0;
    double margin = 40.0;

    std::pair<double, double> project(const LatLon& p) const;
};

/// Odds-ratio rows with their BH-adjusted p-values. Rows without a p-value
/// (flagged) stay out of the adjustment family.
struct AdjustedTable
{
    std::vector<OddsRatioRow> rows;
    std::vector<std::optional<double>> adjusted;

    std::string to_csv() const;
};

AdjustedTable adjust_table(const OddsRatioTable& table);

inline constexpr double kSignificance = 0.05;
inline constexpr double kDiffClamp = 20.0;

struct FigureSet
{
    std::map<std::string, std::string> files;  // file name -> contents
    std::vector<std::string> warnings;
};

FigureSet emit_figures(const NegativeShareTable& shares, const AdjustedTable* table, const CoordinateMap& coordinates,
                       const MapProjection& projection = {});

void write_figures(const FigureSet& figures, const std::filesystem::path& dir);

} // namespace sentrend
