#pragma once

#include "sentrend/io.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sentrend {

// ─── Comments ───────────────────────────────────────────────────────────────

struct RawComment
{
    std::string msg_id;
    std::string school_id;
    std::optional<std::string> parent_id;
    std::int64_t created_utc = 0;
    std::string body;
    std::optional<std::uint64_t> author_dummy;

    /// "[deleted]" / "[removed]" bodies. Kept for graph structure.
    bool is_tombstone() const;

    friend bool operator==(const RawComment&, const RawComment&) = default;
};

class ParseError : public ValidationError
{
public:
    ParseError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

enum class OnMalformed { Abort, Skip };

struct ParseResult
{
    std::vector<RawComment> comments;
    std::size_t skipped = 0;
    std::vector<std::string> diagnostics;
};

/// Reads line-delimited JSON comment records. Blank lines are ignored.
/// Malformed records either abort with a ParseError or are skipped and
/// counted; duplicate msg_ids always abort.
ParseResult parse_comments(std::istream& in, OnMalformed mode = OnMalformed::Abort);
ParseResult parse_comments(std::string_view text, OnMalformed mode = OnMalformed::Abort);

/// Canonical single-line JSON form (no trailing newline).
std::string serialize_comment(const RawComment& c);
std::string serialize_comments(std::span<const RawComment> comments);

// ─── Windowing ──────────────────────────────────────────────────────────────

struct CalendarDate
{
    int year;
    unsigned month;
    unsigned day;
};

CalendarDate utc_date(std::int64_t epoch_seconds);

struct Window
{
    std::set<int> years;
    std::set<unsigned> months;

    /// August through November of 2019-2022.
    static Window study();
    bool contains(std::int64_t epoch_seconds) const;
};

/// Windowed comments grouped by school. Appearance order is preserved both
/// globally and within each school.
class Corpus
{
public:
    Corpus() = default;

    const std::vector<RawComment>& messages() const { return messages_; }
    int year(std::size_t i) const { return years_[i]; }
    const std::vector<int>& years() const { return years_; }
    const Window& window() const { return window_; }
    std::size_t size() const { return messages_.size(); }

    std::vector<std::string> schools() const;
    bool has_school(const std::string& school_id) const { return by_school_.contains(school_id); }
    /// Indices into messages() for one school, in appearance order.
    std::span<const std::size_t> school_messages(const std::string& school_id) const;

private:
    friend Corpus filter_window(std::span<const RawComment>, const Window&);

    std::vector<RawComment> messages_;
    std::vector<int> years_;
    std::map<std::string, std::vector<std::size_t>> by_school_;
    Window window_;
};

Corpus filter_window(std::span<const RawComment> comments, const Window& window);
Corpus filter_window(const Corpus& corpus, const Window& window);

// ─── School covariates ──────────────────────────────────────────────────────

enum class Region { West, South, Northeast, Midwest };
enum class SchoolType { Public, Private };
enum class Cchie { BaccalaureateOrMasters, DoctoralHigh, DoctoralVeryHigh };

std::string_view to_string(Region r);
std::string_view to_string(SchoolType t);
std::string_view to_string(Cchie c);

struct SchoolCovariates
{
    std::string school_id;
    std::optional<Region> region;
    std::optional<SchoolType> school_type;
    std::optional<bool> d1;
    std::optional<Cchie> cchie;
    std::optional<bool> medical;
    std::optional<double> city_population;   // thousands
    std::optional<double> doctoral_programs;
    std::optional<double> tenure;
    std::optional<double> enrollment;        // thousands
    std::optional<double> graduate_student;  // thousands
    std::optional<double> selectivity;       // fraction admitted
    std::optional<double> graduation_rate;   // percent

    bool complete() const;
};

struct NumericField
{
    std::string_view name;
    std::optional<double> SchoolCovariates::*member;
};

inline constexpr std::array<NumericField, 7> kNumericFields{{
    {"city_population", &SchoolCovariates::city_population},
    {"enrollment", &SchoolCovariates::enrollment},
    {"doctoral_programs", &SchoolCovariates::doctoral_programs},
    {"tenure", &SchoolCovariates::tenure},
    {"graduate_student", &SchoolCovariates::graduate_student},
    {"selectivity", &SchoolCovariates::selectivity},
    {"graduation_rate", &SchoolCovariates::graduation_rate},
}};

inline constexpr std::string_view kCovariateHeader =
    "school_id,region,type,d1,cchie,medical,city_population,doctoral_programs,tenure,"
    "enrollment,graduate_student,selectivity,graduation_rate";

/// Parses the covariate CSV. Empty cells and "NA" are missing values; a row
/// with any missing value loads but reports complete() == false.
/// Unmerged Carnegie labels "Baccalaureate" and "Masters" map onto the
/// merged BaccalaureateOrMasters level.
std::vector<SchoolCovariates> load_covariates(std::istream& in);
std::vector<SchoolCovariates> load_covariates(std::string_view text);

std::string serialize_covariates(std::span<const SchoolCovariates> rows);

// ─── Descriptive statistics ─────────────────────────────────────────────────

struct LevelCount
{
    std::string level;
    std::size_t count = 0;
    double percent = 0.0;
};

struct CategoricalSummary
{
    std::string variable;
    std::size_t n = 0;
    std::vector<LevelCount> levels;
};

struct NumericSummary
{
    std::string variable;
    std::size_t n = 0;
    std::optional<double> mean;
    std::optional<double> sd;  // sample SD; undefined for n < 2
    std::optional<double> min;
    std::optional<double> max;
};

struct DescriptiveTable
{
    std::size_t schools = 0;
    std::vector<CategoricalSummary> categorical;
    std::vector<NumericSummary> numeric;

    const NumericSummary& numeric_field(std::string_view name) const;
    const CategoricalSummary& categorical_field(std::string_view name) const;

    /// variable,level,count,percent,n,mean,sd,min,max
    std::string to_csv() const;
};

/// Each variable is summarized over the records where it is present.
DescriptiveTable descriptive_stats(std::span<const SchoolCovariates> rows);

} // namespace sentrend
