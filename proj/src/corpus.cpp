#include "sentrend/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <sstream>
#include <unordered_set>

namespace sentrend {

using json = nlohmann::ordered_json;

// ─── Comments ───────────────────────────────────────────────────────────────

bool RawComment::is_tombstone() const { return body == "[deleted]" || body == "[removed]"; }

ParseError::ParseError(std::size_t line, const std::string& what)
    : ValidationError("line " + std::to_string(line) + ": " + what), line_(line)
{
}

namespace {

std::string require_string(const json& rec, const char* key)
{
    auto it = rec.find(key);
    if (it == rec.end())
        throw std::invalid_argument(std::string("missing field ") + key);
    if (!it->is_string())
        throw std::invalid_argument(std::string("field ") + key + " must be a string");
    auto s = it->get<std::string>();
    if (s.empty())
        throw std::invalid_argument(std::string("field ") + key + " is empty");
    return s;
}

std::int64_t require_integer(const json& v, const char* key)
{
    if (v.is_number_integer())
        return v.get<std::int64_t>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.0e15)
            return static_cast<std::int64_t>(d);
    }
    throw std::invalid_argument(std::string("field ") + key + " must be an integer");
}

RawComment comment_from_json(const json& rec)
{
    if (!rec.is_object())
        throw std::invalid_argument("record is not a JSON object");
    RawComment c;
    c.msg_id = require_string(rec, "msg_id");
    c.school_id = require_string(rec, "school_id");
    if (auto it = rec.find("parent_id"); it != rec.end() && !it->is_null()) {
        if (!it->is_string())
            throw std::invalid_argument("field parent_id must be a string or null");
        c.parent_id = it->get<std::string>();
        if (c.parent_id->empty())
            c.parent_id.reset();
        else if (*c.parent_id == c.msg_id)
            throw std::invalid_argument("parent_id equals msg_id " + c.msg_id);
    }
    auto ts = rec.find("created_utc");
    if (ts == rec.end())
        throw std::invalid_argument("missing field created_utc");
    c.created_utc = require_integer(*ts, "created_utc");
    auto body = rec.find("body");
    if (body == rec.end() || !body->is_string())
        throw std::invalid_argument("missing or non-string field body");
    c.body = body->get<std::string>();
    if (auto it = rec.find("author_dummy"); it != rec.end() && !it->is_null()) {
        const auto a = require_integer(*it, "author_dummy");
        if (a < 1)
            throw std::invalid_argument("author_dummy must be >= 1");
        c.author_dummy = static_cast<std::uint64_t>(a);
    }
    return c;
}

} // namespace

ParseResult parse_comments(std::istream& in, OnMalformed mode)
{
    ParseResult result;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos)
            continue;
        RawComment c;
        try {
            c = comment_from_json(json::parse(line));
        } catch (const std::exception& e) {
            if (mode == OnMalformed::Abort)
                throw ParseError(lineno, e.what());
            ++result.skipped;
            result.diagnostics.push_back("line " + std::to_string(lineno) + ": " + e.what());
            continue;
        }
        if (!seen.insert(c.msg_id).second)
            throw ParseError(lineno, "duplicate msg_id " + c.msg_id);
        result.comments.push_back(std::move(c));
    }
    return result;
}

ParseResult parse_comments(std::string_view text, OnMalformed mode)
{
    std::istringstream in{std::string(text)};
    return parse_comments(in, mode);
}

std::string serialize_comment(const RawComment& c)
{
    json j;
    j["msg_id"] = c.msg_id;
    j["school_id"] = c.school_id;
    j["parent_id"] = c.parent_id ? json(*c.parent_id) : json(nullptr);
    j["created_utc"] = c.created_utc;
    j["body"] = c.body;
    if (c.author_dummy)
        j["author_dummy"] = *c.author_dummy;
    return j.dump();
}

std::string serialize_comments(std::span<const RawComment> comments)
{
    std::string out;
    for (const auto& c : comments) {
        out += serialize_comment(c);
        out += '\n';
    }
    return out;
}

// ─── Windowing ──────────────────────────────────────────────────────────────

CalendarDate utc_date(std::int64_t epoch_seconds)
{
    using namespace std::chrono;
    const sys_seconds tp{seconds{epoch_seconds}};
    const year_month_day ymd{floor<days>(tp)};
    return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day())};
}

Window Window::study() { return Window{{2019, 2020, 2021, 2022}, {8, 9, 10, 11}}; }

bool Window::contains(std::int64_t epoch_seconds) const
{
    const auto d = utc_date(epoch_seconds);
    return years.contains(d.year) && months.contains(d.month);
}

std::vector<std::string> Corpus::schools() const
{
    std::vector<std::string> out;
    out.reserve(by_school_.size());
    for (const auto& [k, _] : by_school_)
        out.push_back(k);
    return out;
}

std::span<const std::size_t> Corpus::school_messages(const std::string& school_id) const
{
    auto it = by_school_.find(school_id);
    if (it == by_school_.end())
        return {};
    return it->second;
}

Corpus filter_window(std::span<const RawComment> comments, const Window& window)
{
    if (window.months.empty())
        throw ValidationError("window months must be non-empty");
    for (unsigned m : window.months)
        if (m < 1 || m > 12)
            throw ValidationError("window month out of range: " + std::to_string(m));

    Corpus corpus;
    corpus.window_ = window;
    for (const auto& c : comments) {
        const auto d = utc_date(c.created_utc);
        if (!window.years.contains(d.year) || !window.months.contains(d.month))
            continue;
        corpus.by_school_[c.school_id].push_back(corpus.messages_.size());
        corpus.messages_.push_back(c);
        corpus.years_.push_back(d.year);
    }
    return corpus;
}

Corpus filter_window(const Corpus& corpus, const Window& window) { return filter_window(corpus.messages(), window); }

// ─── School covariates ──────────────────────────────────────────────────────

std::string_view to_string(Region r)
{
    switch (r) {
    case Region::West: return "West";
    case Region::South: return "South";
    case Region::Northeast: return "Northeast";
    case Region::Midwest: return "Midwest";
    }
    return "?";
}

std::string_view to_string(SchoolType t) { return t == SchoolType::Public ? "Public" : "Private"; }

std::string_view to_string(Cchie c)
{
    switch (c) {
    case Cchie::BaccalaureateOrMasters: return "BaccalaureateOrMasters";
    case Cchie::DoctoralHigh: return "DoctoralHigh";
    case Cchie::DoctoralVeryHigh: return "DoctoralVeryHigh";
    }
    return "?";
}

bool SchoolCovariates::complete() const
{
    if (!region || !school_type || !d1 || !cchie || !medical)
        return false;
    return std::all_of(kNumericFields.begin(), kNumericFields.end(),
                       [this](const NumericField& f) { return (this->*f.member).has_value(); });
}

namespace {

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return out;
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

bool is_missing(std::string_view v) { return v.empty() || v == "NA" || v == "na" || v == "NaN"; }

class RowContext
{
public:
    RowContext(std::size_t row, const std::vector<std::string>& header) : row_(row), header_(header) {}

    [[noreturn]] void fail(std::size_t col, const std::string& what) const
    {
        throw ValidationError("covariates row " + std::to_string(row_) + ", column " + header_[col] + ": " + what);
    }

private:
    std::size_t row_;
    const std::vector<std::string>& header_;
};

std::optional<Region> parse_region(const std::string& v, const RowContext& ctx, std::size_t col)
{
    if (is_missing(v))
        return std::nullopt;
    const auto l = lower(v);
    if (l == "west") return Region::West;
    if (l == "south") return Region::South;
    if (l == "northeast") return Region::Northeast;
    if (l == "midwest") return Region::Midwest;
    ctx.fail(col, "unknown category '" + v + "'");
}

std::optional<SchoolType> parse_type(const std::string& v, const RowContext& ctx, std::size_t col)
{
    if (is_missing(v))
        return std::nullopt;
    const auto l = lower(v);
    if (l == "public") return SchoolType::Public;
    if (l == "private") return SchoolType::Private;
    ctx.fail(col, "unknown category '" + v + "'");
}

std::optional<Cchie> parse_cchie(const std::string& v, const RowContext& ctx, std::size_t col)
{
    if (is_missing(v))
        return std::nullopt;
    const auto l = lower(v);
    if (l == "baccalaureateormasters" || l == "baccalaureate" || l == "masters")
        return Cchie::BaccalaureateOrMasters;
    if (l == "doctoralhigh") return Cchie::DoctoralHigh;
    if (l == "doctoralveryhigh") return Cchie::DoctoralVeryHigh;
    ctx.fail(col, "unknown category '" + v + "'");
}

std::optional<bool> parse_flag(const std::string& v, const RowContext& ctx, std::size_t col)
{
    if (is_missing(v))
        return std::nullopt;
    const auto l = lower(v);
    if (l == "yes" || l == "true" || l == "1") return true;
    if (l == "no" || l == "false" || l == "0") return false;
    ctx.fail(col, "unknown category '" + v + "'");
}

std::optional<double> parse_number(const std::string& v, const RowContext& ctx, std::size_t col)
{
    if (is_missing(v))
        return std::nullopt;
    double d = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(d))
        ctx.fail(col, "non-numeric value '" + v + "'");
    if (d < 0.0)
        ctx.fail(col, "negative value " + v);
    return d;
}

std::string flag_string(bool b) { return b ? "Yes" : "No"; }

} // namespace

std::vector<SchoolCovariates> load_covariates(std::istream& in)
{
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty())
            break;
    }
    auto header = csv::split(line);
    for (auto& h : header)
        h = trim(h);
    const auto expected = csv::split(kCovariateHeader);
    if (header != expected)
        throw ValidationError("covariates header does not match schema: expected " + std::string(kCovariateHeader));

    std::vector<SchoolCovariates> rows;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        auto fields = csv::split(line);
        for (auto& f : fields)
            f = trim(f);
        if (fields.size() != header.size())
            throw ValidationError("covariates row " + std::to_string(lineno) + ": expected "
                                  + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        RowContext ctx(lineno, header);
        SchoolCovariates r;
        if (fields[0].empty())
            ctx.fail(0, "empty school_id");
        r.school_id = fields[0];
        if (!seen.insert(r.school_id).second)
            ctx.fail(0, "duplicate school_id " + r.school_id);
        r.region = parse_region(fields[1], ctx, 1);
        r.school_type = parse_type(fields[2], ctx, 2);
        r.d1 = parse_flag(fields[3], ctx, 3);
        r.cchie = parse_cchie(fields[4], ctx, 4);
        r.medical = parse_flag(fields[5], ctx, 5);
        for (std::size_t k = 0; k < kNumericFields.size(); ++k)
            r.*(kNumericFields[k].member) = parse_number(fields[6 + k], ctx, 6 + k);
        if (r.selectivity && *r.selectivity > 1.0)
            ctx.fail(11, "selectivity must lie in [0,1]");
        if (r.graduation_rate && *r.graduation_rate > 100.0)
            ctx.fail(12, "graduation_rate must lie in [0,100]");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<SchoolCovariates> load_covariates(std::string_view text)
{
    std::istringstream in{std::string(text)};
    return load_covariates(in);
}

std::string serialize_covariates(std::span<const SchoolCovariates> rows)
{
    std::string out(kCovariateHeader);
    out += '\n';
    for (const auto& r : rows) {
        std::vector<std::string> f;
        f.push_back(r.school_id);
        f.push_back(r.region ? std::string(to_string(*r.region)) : "");
        f.push_back(r.school_type ? std::string(to_string(*r.school_type)) : "");
        f.push_back(r.d1 ? flag_string(*r.d1) : "");
        f.push_back(r.cchie ? std::string(to_string(*r.cchie)) : "");
        f.push_back(r.medical ? flag_string(*r.medical) : "");
        for (const auto& nf : kNumericFields) {
            const auto& v = r.*(nf.member);
            f.push_back(v ? format_double(*v) : "");
        }
        out += csv::join(f);
        out += '\n';
    }
    return out;
}

// ─── Descriptive statistics ─────────────────────────────────────────────────

const NumericSummary& DescriptiveTable::numeric_field(std::string_view name) const
{
    for (const auto& s : numeric)
        if (s.variable == name)
            return s;
    throw std::out_of_range("no numeric variable " + std::string(name));
}

const CategoricalSummary& DescriptiveTable::categorical_field(std::string_view name) const
{
    for (const auto& s : categorical)
        if (s.variable == name)
            return s;
    throw std::out_of_range("no categorical variable " + std::string(name));
}

std::string DescriptiveTable::to_csv() const
{
    std::string out = "variable,level,count,percent,n,mean,sd,min,max\n";
    for (const auto& c : categorical)
        for (const auto& l : c.levels)
            out += csv::join({c.variable, l.level, std::to_string(l.count), format_fixed(l.percent, 2),
                              std::to_string(c.n), "", "", "", ""})
                 + '\n';
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& s : numeric)
        out += csv::join({s.variable, "", "", "", std::to_string(s.n), opt(s.mean), opt(s.sd), opt(s.min), opt(s.max)})
             + '\n';
    return out;
}

namespace {

template <typename Enum, typename Getter>
CategoricalSummary summarize_levels(std::string variable, std::span<const SchoolCovariates> rows,
                                    const std::vector<std::pair<Enum, std::string>>& levels, Getter get)
{
    CategoricalSummary s;
    s.variable = std::move(variable);
    for (const auto& [value, label] : levels) {
        LevelCount lc;
        lc.level = label;
        for (const auto& r : rows) {
            const auto v = get(r);
            if (v && *v == value)
                ++lc.count;
        }
        s.levels.push_back(lc);
    }
    for (const auto& r : rows)
        if (get(r))
            ++s.n;
    for (auto& lc : s.levels)
        lc.percent = s.n ? 100.0 * static_cast<double>(lc.count) / static_cast<double>(s.n) : 0.0;
    return s;
}

} // namespace

DescriptiveTable descriptive_stats(std::span<const SchoolCovariates> rows)
{
    DescriptiveTable t;
    t.schools = rows.size();
    t.categorical.push_back(summarize_levels<Region>(
        "region", rows,
        {{Region::West, "West"}, {Region::South, "South"}, {Region::Northeast, "Northeast"}, {Region::Midwest, "Midwest"}},
        [](const SchoolCovariates& r) { return r.region; }));
    t.categorical.push_back(summarize_levels<SchoolType>("type", rows,
                                                         {{SchoolType::Private, "Private"}, {SchoolType::Public, "Public"}},
                                                         [](const SchoolCovariates& r) { return r.school_type; }));
    t.categorical.push_back(summarize_levels<bool>("d1", rows, {{true, "Yes"}, {false, "No"}},
                                                   [](const SchoolCovariates& r) { return r.d1; }));
    t.categorical.push_back(summarize_levels<Cchie>("cchie", rows,
                                                    {{Cchie::BaccalaureateOrMasters, "BaccalaureateOrMasters"},
                                                     {Cchie::DoctoralHigh, "DoctoralHigh"},
                                                     {Cchie::DoctoralVeryHigh, "DoctoralVeryHigh"}},
                                                    [](const SchoolCovariates& r) { return r.cchie; }));
    t.categorical.push_back(summarize_levels<bool>("medical", rows, {{true, "Yes"}, {false, "No"}},
                                                   [](const SchoolCovariates& r) { return r.medical; }));

    for (const auto& f : kNumericFields) {
        NumericSummary s;
        s.variable = std::string(f.name);
        std::vector<double> v;
        for (const auto& r : rows)
            if (const auto& x = r.*(f.member))
                v.push_back(*x);
        s.n = v.size();
        if (!v.empty()) {
            double sum = 0.0;
            for (double x : v)
                sum += x;
            const double mean = sum / static_cast<double>(v.size());
            s.mean = mean;
            s.min = *std::min_element(v.begin(), v.end());
            s.max = *std::max_element(v.begin(), v.end());
            if (v.size() >= 2) {
                double ss = 0.0;
                for (double x : v)
                    ss += (x - mean) * (x - mean);
                s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
            }
        }
        t.numeric.push_back(std::move(s));
    }
    return t;
}

} // namespace sentrend
