#include "sentrend/report.hpp"

#include "sentrend/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace sentrend {

void validate_pvalues(const PValueSet& set)
{
    std::set<std::string_view> seen;
    for (const auto& e : set) {
        if (!seen.insert(e.name).second)
            throw ValidationError("duplicate test name " + e.name);
        if (!(e.p > 0.0 && e.p <= 1.0))
            throw ValidationError("p-value for " + e.name + " outside (0,1]: " + format_double(e.p));
    }
}

std::vector<double> bh_adjust(std::span<const double> p)
{
    for (double v : p)
        if (!(v > 0.0 && v <= 1.0))
            throw ValidationError("p-value outside (0,1]: " + format_double(v));
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

    std::vector<double> out(m);
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const double raw = p[order[k]];
        const double scaled = std::max(raw, static_cast<double>(m) * raw / static_cast<double>(k + 1));
        running = std::min(running, scaled);
        out[order[k]] = running;
    }
    return out;
}

PValueSet bh_adjust(const PValueSet& set)
{
    validate_pvalues(set);
    std::vector<double> raw;
    for (const auto& e : set)
        raw.push_back(e.p);
    const auto adj = bh_adjust(std::span<const double>(raw));
    PValueSet out = set;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i].p = adj[i];
    return out;
}

// ─── Negative shares ────────────────────────────────────────────────────────

std::vector<int> NegativeShareTable::years() const
{
    std::set<int> y;
    for (const auto& c : cells)
        y.insert(c.year);
    return {y.begin(), y.end()};
}

std::size_t NegativeShareTable::total_messages() const
{
    std::size_t n = 0;
    for (const auto& c : cells)
        n += c.messages;
    return n;
}

NegativeShareTable negative_share(std::span<const ClassifiedMessage> messages, int baseline_year)
{
    std::map<std::pair<std::string, int>, ShareCell> cells;
    for (const auto& m : messages) {
        auto& c = cells[{m.school_id, m.year}];
        c.school_id = m.school_id;
        c.year = m.year;
        ++c.messages;
        c.negatives += m.negative ? 1 : 0;
    }
    NegativeShareTable t;
    t.baseline_year = baseline_year;
    for (auto& [key, cell] : cells)
        t.cells.push_back(cell);

    for (auto it = t.cells.begin(); it != t.cells.end();) {
        auto end = std::find_if(it, t.cells.end(), [&](const ShareCell& c) { return c.school_id != it->school_id; });
        auto base = std::find_if(it, end, [&](const ShareCell& c) { return c.year == baseline_year; });
        if (base == end) {
            t.missing_baseline.push_back(it->school_id);
        } else {
            for (auto c = it; c != end; ++c)
                if (c != base)
                    t.diffs.push_back({c->school_id, c->year, base->share(), c->share(),
                                       (c->share() - base->share()) * 100.0});
        }
        it = end;
    }
    return t;
}

// ─── Coordinates ────────────────────────────────────────────────────────────

CoordinateMap load_coordinates(std::string_view text)
{
    CoordinateMap out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (lineno == 1) {
            if (line != "school_id,lat,lon")
                throw ValidationError("coordinates header must be school_id,lat,lon");
            continue;
        }
        if (line.empty())
            continue;
        const auto f = csv::split(line);
        if (f.size() != 3)
            throw ValidationError("coordinates line " + std::to_string(lineno) + ": expected 3 fields");
        LatLon p;
        try {
            std::size_t used = 0;
            p.lat = std::stod(f[1], &used);
            if (used != f[1].size())
                throw std::invalid_argument("lat");
            p.lon = std::stod(f[2], &used);
            if (used != f[2].size())
                throw std::invalid_argument("lon");
        } catch (const std::logic_error&) {
            throw ValidationError("coordinates line " + std::to_string(lineno) + ": bad number");
        }
        if (!(p.lat >= -90.0 && p.lat <= 90.0 && p.lon >= -180.0 && p.lon <= 180.0))
            throw ValidationError("coordinates line " + std::to_string(lineno) + ": out of range");
        if (!out.emplace(f[0], p).second)
            throw ValidationError("duplicate coordinates for " + f[0]);
    }
    return out;
}

std::pair<double, double> MapProjection::project(const LatLon& p) const
{
    const double x = margin + (p.lon - lon_min) / (lon_max - lon_min) * (width - 2.0 * margin);
    const double y = margin + (lat_max - p.lat) / (lat_max - lat_min) * (height - 2.0 * margin);
    return {x, y};
}

// ─── Odds-ratio table ───────────────────────────────────────────────────────

AdjustedTable adjust_table(const OddsRatioTable& table)
{
    AdjustedTable out;
    out.rows = table.rows;
    out.adjusted.resize(table.rows.size());
    std::vector<double> raw;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        if (table.rows[i].p_value) {
            raw.push_back(*table.rows[i].p_value);
            where.push_back(i);
        }
    const auto adj = bh_adjust(std::span<const double>(raw));
    for (std::size_t k = 0; k < where.size(); ++k)
        out.adjusted[where[k]] = adj[k];
    return out;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

} // namespace

std::string AdjustedTable::to_csv() const
{
    std::string out = "name,or,lo,hi,p_raw,p_adj,significant\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const bool sig = adjusted[i] && *adjusted[i] < kSignificance;
        out += csv::join({r.name, format_double(r.odds_ratio), opt(r.lower), opt(r.upper), opt(r.p_value),
                          opt(adjusted[i]), r.flagged ? "NA" : (sig ? "1" : "0")});
        out += '\n';
    }
    return out;
}

// ─── SVG ────────────────────────────────────────────────────────────────────

namespace {

std::string xml_escape(std::string_view s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string px(double v) { return format_fixed(v, 2); }

class Svg
{
public:
    Svg(double width, double height) : width_(width), height_(height) {}

    void line(double x1, double y1, double x2, double y2, std::string_view stroke, double w = 1.0,
              std::string_view extra = "")
    {
        body_ += "<line x1=\"" + px(x1) + "\" y1=\"" + px(y1) + "\" x2=\"" + px(x2) + "\" y2=\"" + px(y2)
               + "\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"" + px(w) + "\"";
        if (!extra.empty())
            body_ += " " + std::string(extra);
        body_ += "/>\n";
    }

    void rect(double x, double y, double w, double h, std::string_view fill, std::string_view stroke = "none")
    {
        body_ += "<rect x=\"" + px(x) + "\" y=\"" + px(y) + "\" width=\"" + px(w) + "\" height=\"" + px(h)
               + "\" fill=\"" + std::string(fill) + "\" stroke=\"" + std::string(stroke) + "\"/>\n";
    }

    void circle(double cx, double cy, double r, std::string_view fill, std::string_view id = "")
    {
        body_ += "<circle";
        if (!id.empty())
            body_ += " data-school=\"" + xml_escape(id) + "\"";
        body_ += " cx=\"" + px(cx) + "\" cy=\"" + px(cy) + "\" r=\"" + px(r) + "\" fill=\"" + std::string(fill)
               + "\" stroke=\"#333333\" stroke-width=\"0.50\"/>\n";
    }

    void cross(double cx, double cy, double r)
    {
        body_ += "<path class=\"out-of-range\" d=\"M" + px(cx - r) + "," + px(cy - r) + " L" + px(cx + r) + ","
               + px(cy + r) + " M" + px(cx - r) + "," + px(cy + r) + " L" + px(cx + r) + "," + px(cy - r)
               + "\" stroke=\"#000000\" stroke-width=\"1.50\"/>\n";
    }

    void text(double x, double y, std::string_view s, std::string_view anchor = "start", double size = 11.0,
              std::string_view cls = "")
    {
        body_ += "<text";
        if (!cls.empty())
            body_ += " class=\"" + std::string(cls) + "\"";
        body_ += " x=\"" + px(x) + "\" y=\"" + px(y) + "\" font-size=\"" + px(size) + "\" text-anchor=\""
               + std::string(anchor) + "\">" + xml_escape(s) + "</text>\n";
    }

    std::string str() const
    {
        return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(width_) + "\" height=\"" + px(height_)
             + "\" viewBox=\"0 0 " + px(width_) + " " + px(height_) + "\">\n<rect width=\"100%\" height=\"100%\" "
             "fill=\"#ffffff\"/>\n" + body_ + "</svg>\n";
    }

private:
    double width_;
    double height_;
    std::string body_;
};

struct Rgb
{
    double r, g, b;
};

std::string hex(Rgb c)
{
    auto h = [](double v) {
        static constexpr char digits[] = "0123456789abcdef";
        const int n = static_cast<int>(std::lround(std::clamp(v, 0.0, 255.0)));
        return std::string{digits[n / 16], digits[n % 16]};
    };
    return "#" + h(c.r) + h(c.g) + h(c.b);
}

Rgb mix(Rgb a, Rgb b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

constexpr Rgb kBlue{33, 102, 172};
constexpr Rgb kWhite{247, 247, 247};
constexpr Rgb kRed{178, 24, 43};

/// Diverging scale anchored at 0, saturating at +-kDiffClamp points.
std::string diverging(double points)
{
    const double t = std::clamp(points, -kDiffClamp, kDiffClamp) / kDiffClamp;
    return hex(t < 0.0 ? mix(kWhite, kBlue, -t) : mix(kWhite, kRed, t));
}

std::string sequential(double share) { return hex(mix(kWhite, kRed, std::clamp(share, 0.0, 1.0))); }

void map_frame(Svg& svg, const MapProjection& proj, std::string_view title)
{
    const double x0 = proj.margin, y0 = proj.margin;
    const double x1 = proj.width - proj.margin, y1 = proj.height - proj.margin;
    svg.rect(x0, y0, x1 - x0, y1 - y0, "none", "#999999");
    svg.text(proj.width / 2.0, proj.margin / 2.0 + 4.0, title, "middle", 14.0);
    svg.text(proj.width / 2.0, proj.height - 10.0, "longitude", "middle");
    svg.text(12.0, proj.height / 2.0, "latitude", "start");
}

struct Histogram
{
    static constexpr int kBins = 20;
    std::array<int, kBins> counts{};
    double mean = 0.0;
    double median = 0.0;
};

Histogram histogram(std::vector<double> percents)
{
    Histogram h;
    if (percents.empty())
        return h;
    for (double v : percents) {
        const int bin = std::clamp(static_cast<int>(std::floor(v / 5.0)), 0, Histogram::kBins - 1);
        ++h.counts[static_cast<std::size_t>(bin)];
    }
    h.mean = std::accumulate(percents.begin(), percents.end(), 0.0) / static_cast<double>(percents.size());
    std::sort(percents.begin(), percents.end());
    const std::size_t n = percents.size();
    h.median = n % 2 == 1 ? percents[n / 2] : 0.5 * (percents[n / 2 - 1] + percents[n / 2]);
    return h;
}

} // namespace

FigureSet emit_figures(const NegativeShareTable& shares, const AdjustedTable* table, const CoordinateMap& coordinates,
                       const MapProjection& projection)
{
    FigureSet out;
    const auto years = shares.years();

    std::set<std::string> missing;
    for (const auto& c : shares.cells)
        if (!coordinates.contains(c.school_id))
            missing.insert(c.school_id);
    for (const auto& s : missing)
        out.warnings.push_back("no coordinates for school " + s + "; omitted from maps");

    // Per-cell shares.
    std::string shares_csv = "school,year,n,n_neg,share\n";
    for (const auto& c : shares.cells)
        shares_csv += csv::join({c.school_id, std::to_string(c.year), std::to_string(c.messages),
                                 std::to_string(c.negatives), format_double(c.share())})
                    + "\n";
    out.files["shares.csv"] = std::move(shares_csv);

    std::string diffs_csv = "school,year,baseline_share,share,diff_points,out_of_range\n";
    for (const auto& d : shares.diffs)
        diffs_csv += csv::join({d.school_id, std::to_string(d.year), format_double(d.baseline_share),
                                format_double(d.share), format_double(d.points),
                                std::abs(d.points) > kDiffClamp ? "1" : "0"})
                   + "\n";
    out.files["diffs.csv"] = std::move(diffs_csv);

    const double radius = 6.0;
    for (int year : years) {
        Svg svg(projection.width, projection.height);
        map_frame(svg, projection, "Negative share " + std::to_string(year));
        for (const auto& c : shares.cells) {
            if (c.year != year || !coordinates.contains(c.school_id))
                continue;
            const auto [x, y] = projection.project(coordinates.at(c.school_id));
            svg.circle(x, y, radius, sequential(c.share()), c.school_id);
        }
        out.files["heatmap_" + std::to_string(year) + ".svg"] = svg.str();

        if (year == shares.baseline_year)
            continue;
        Svg diff(projection.width, projection.height);
        map_frame(diff, projection,
                  "Difference vs " + std::to_string(shares.baseline_year) + ", " + std::to_string(year) + " (points)");
        for (const auto& d : shares.diffs) {
            if (d.year != year || !coordinates.contains(d.school_id))
                continue;
            const auto [x, y] = projection.project(coordinates.at(d.school_id));
            diff.circle(x, y, radius, diverging(d.points), d.school_id);
            if (std::abs(d.points) > kDiffClamp)
                diff.cross(x, y, radius);
        }
        out.files["diff_" + std::to_string(year) + ".svg"] = diff.str();
    }

    // Distribution of cell shares, one panel per year.
    {
        const double width = 640.0, panel = 160.0, left = 50.0, right = 20.0, top = 30.0;
        const auto panels = std::max<std::size_t>(years.size(), 1);
        Svg svg(width, top + panel * static_cast<double>(panels) + 30.0);
        std::string hist_csv = "year,bin_lo,bin_hi,count\n";
        std::string stats_csv = "year,cells,mean,median\n";
        const double plot_w = width - left - right;
        auto x_of = [&](double pct) { return left + pct / 100.0 * plot_w; };
        for (std::size_t k = 0; k < panels; ++k) {
            const double y0 = top + panel * static_cast<double>(k);
            const double base = y0 + panel - 30.0;
            svg.line(left, base, left + plot_w, base, "#000000");
            svg.line(left, y0 + 10.0, left, base, "#000000");
            for (int t = 0; t <= 100; t += 20)
                svg.text(x_of(t), base + 14.0, std::to_string(t) + "%", "middle", 10.0);
            if (years.empty())
                continue;
            const int year = years[k];
            std::vector<double> pct;
            for (const auto& c : shares.cells)
                if (c.year == year)
                    pct.push_back(c.share() * 100.0);
            const auto h = histogram(pct);
            const int peak = std::max(1, *std::max_element(h.counts.begin(), h.counts.end()));
            const double bar_h = base - (y0 + 20.0);
            for (int b = 0; b < Histogram::kBins; ++b) {
                const int n = h.counts[static_cast<std::size_t>(b)];
                hist_csv += std::to_string(year) + "," + std::to_string(b * 5) + "," + std::to_string(b * 5 + 5) + ","
                          + std::to_string(n) + "\n";
                if (n == 0)
                    continue;
                const double hh = bar_h * n / peak;
                svg.rect(x_of(b * 5.0), base - hh, plot_w / Histogram::kBins, hh, "#6a9fcb", "#ffffff");
            }
            stats_csv += std::to_string(year) + "," + std::to_string(pct.size()) + "," + format_double(h.mean) + ","
                       + format_double(h.median) + "\n";
            svg.text(left + 6.0, y0 + 18.0, std::to_string(year) + " (n=" + std::to_string(pct.size()) + ")");
            if (!pct.empty()) {
                svg.line(x_of(h.median), y0 + 20.0, x_of(h.median), base, "#d62728", 1.5, "class=\"median\"");
                svg.line(x_of(h.mean), y0 + 20.0, x_of(h.mean), base, "#2ca02c", 1.5,
                         "class=\"mean\" stroke-dasharray=\"4,3\"");
            }
        }
        svg.text(width / 2.0, 18.0, "Negative share per school (median solid, mean dashed)", "middle", 13.0);
        out.files["hist.svg"] = svg.str();
        out.files["hist.csv"] = std::move(hist_csv);
        out.files["hist_stats.csv"] = std::move(stats_csv);
    }

    if (table) {
        out.files["odds_ratios.csv"] = table->to_csv();
        const double width = 720.0, row_h = 22.0, label_w = 220.0, right = 90.0, top = 40.0;
        const auto n = table->rows.size();
        Svg svg(width, top + row_h * static_cast<double>(std::max<std::size_t>(n, 1)) + 40.0);
        double lo = 1.0, hi = 1.0;
        for (const auto& r : table->rows) {
            lo = std::min({lo, r.odds_ratio, r.lower.value_or(r.odds_ratio)});
            hi = std::max({hi, r.odds_ratio, r.upper.value_or(r.odds_ratio)});
        }
        const double llo = std::log(lo) - 0.05, lhi = std::log(hi) + 0.05;
        const double plot_w = width - label_w - right;
        auto x_of = [&](double v) { return label_w + (std::log(v) - llo) / (lhi - llo) * plot_w; };
        const double bottom = top + row_h * static_cast<double>(std::max<std::size_t>(n, 1));
        svg.line(x_of(1.0), top - 10.0, x_of(1.0), bottom, "#888888", 1.0, "stroke-dasharray=\"3,3\"");
        svg.line(label_w, bottom, label_w + plot_w, bottom, "#000000");
        svg.text(x_of(lo), bottom + 16.0, format_fixed(lo, 3), "middle", 10.0);
        svg.text(x_of(1.0), bottom + 16.0, "1", "middle", 10.0);
        svg.text(x_of(hi), bottom + 16.0, format_fixed(hi, 3), "middle", 10.0);
        svg.text(width / 2.0, 20.0, "Odds ratios (95% CI)", "middle", 13.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = table->rows[i];
            const double y = top + row_h * (static_cast<double>(i) + 0.5);
            svg.text(label_w - 8.0, y + 4.0, r.name, "end");
            if (r.lower && r.upper)
                svg.line(x_of(*r.lower), y, x_of(*r.upper), y, "#000000", 1.5);
            svg.rect(x_of(r.odds_ratio) - 3.0, y - 3.0, 6.0, 6.0, r.flagged ? "#999999" : "#000000");
            std::string label = format_fixed(r.odds_ratio, 3);
            const auto& adj = table->adjusted[i];
            svg.text(label_w + plot_w + 8.0, y + 4.0, label, "start", 10.0);
            if (adj && *adj < kSignificance)
                svg.text(label_w + plot_w + 48.0, y + 4.0, "*", "start", 12.0, "significant");
        }
        out.files["forest.svg"] = svg.str();
    }
    return out;
}

void write_figures(const FigureSet& figures, const std::filesystem::path& dir)
{
    for (const auto& [name, content] : figures.files)
        write_file_atomic(dir / name, content);
}

} // namespace sentrend
