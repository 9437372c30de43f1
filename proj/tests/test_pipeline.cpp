#include "sentrend/io.hpp"
#include "sentrend/rng.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using sentrend::read_file;

namespace {

const fs::path kFixtures = FIXTURE_DIR;

struct Run
{
    int code = -1;
    std::string err;
};

Run cli(const std::string& args)
{
    const auto err_file = fs::temp_directory_path() / "sentrend_cli_stderr.txt";
    const std::string cmd = std::string(CLI_PATH) + " " + args + " >/dev/null 2>" + err_file.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = read_file(err_file);
    return r;
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("sentrend_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string fixture_args()
{
    const auto f = [](const char* name) { return (kFixtures / name).string(); };
    return " --comments " + f("comments.jsonl") + " --covariates " + f("covariates.csv") + " --embeddings "
         + f("pipeline_embeddings.emb1") + " --embedding-ids " + f("pipeline_embeddings.ids") + " --upstream "
         + f("upstream.csv") + " --labels " + f("labels.csv") + " --coordinates " + f("coordinates.csv")
         + " --gat-heads 2 --gat-hidden 4 --gat-epochs 60";
}

std::size_t line_count(const std::string& text)
{
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::map<std::string, std::string> snapshot(const fs::path& dir)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            files[e.path().lexically_relative(dir).generic_string()] = read_file(e.path());
    return files;
}

} // namespace

TEST_CASE("exit codes")
{
    const auto dir = scratch("codes");
    CHECK(cli("").code == 2);
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("sample --cap 0 --out " + dir.string()).code == 2);
    CHECK(cli("ingest --on-malformed maybe --out " + dir.string()).code == 2);
    CHECK(cli("ingest --years 2019-x --comments " + (kFixtures / "comments.jsonl").string() + " --out " + dir.string())
              .code == 2);
    CHECK(cli("--version").code == 0);

    const auto bad = dir / "bad.jsonl";
    sentrend::write_file_atomic(bad, "{\"msg_id\": \"a\"}\n");
    const auto r = cli("ingest --comments " + bad.string() + " --out " + dir.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("[ingest]") != std::string::npos);
    CHECK(cli("ingest --on-malformed skip --comments " + bad.string() + " --out " + dir.string()).code == 0);
}

TEST_CASE("missing upstream output names the stage")
{
    const auto dir = scratch("missing");
    const auto r = cli("glmm --out " + dir.string());
    CHECK(r.code == 3);
    CHECK(r.err.find("[glmm]") != std::string::npos);
    CHECK(r.err.find("missing input") != std::string::npos);
    CHECK(r.err.find("predictions.csv") != std::string::npos);
}

TEST_CASE("full run on empty comments")
{
    const auto dir = scratch("empty");
    sentrend::write_file_atomic(dir / "empty.jsonl", "");
    const auto r = cli("all --comments " + (dir / "empty.jsonl").string() + " --out " + (dir / "out").string());
    CHECK(r.code == 0);
    CHECK(read_file(dir / "out/score/p_gat.csv") == "msg_id,p_gat\n");
    CHECK(read_file(dir / "out/report/shares.csv") == "school,year,n,n_neg,share\n");
    CHECK(r.err.find("[glmm]") != std::string::npos);
    for (const char* stage : {"ingest", "graph", "sample", "score", "stack", "glmm", "report"})
        CHECK(fs::exists(dir / "out" / stage / "manifest.json"));
}

TEST_CASE("full run on the fixture corpus")
{
    const auto dir = scratch("full");
    const auto r = cli("all" + fixture_args() + " --out " + dir.string());
    REQUIRE(r.code == 0);
    CHECK(r.err.find("u24") != std::string::npos);

    const auto pred = read_file(dir / "stack/predictions.csv");
    CHECK(pred.rfind("msg_id,school_id,year,p_gat,p_upstream,p_stacked,class\n", 0) == 0);
    CHECK(line_count(pred) == 1501);
    const auto odds = read_file(dir / "report/odds_ratios.csv");
    CHECK(line_count(odds) == 19);
    CHECK(odds.find("year:2020,") != std::string::npos);
    CHECK(fs::exists(dir / "report/forest.svg"));
    CHECK(fs::exists(dir / "report/heatmap_2022.svg"));

    const auto manifest = read_file(dir / "glmm/manifest.json");
    CHECK(manifest.find("\"stage\": \"glmm\"") != std::string::npos);
    CHECK(manifest.find("\"stack/predictions.csv\"") != std::string::npos);
    CHECK(manifest.find("\"fit.json\"") != std::string::npos);
}

TEST_CASE("reruns are byte identical")
{
    const auto dir = scratch("rerun");
    REQUIRE(cli("all" + fixture_args() + " --rng-seed 5 --out " + dir.string()).code == 0);
    const auto first = snapshot(dir);
    REQUIRE(cli("glmm" + fixture_args() + " --rng-seed 5 --out " + dir.string()).code == 0);
    REQUIRE(cli("report" + fixture_args() + " --rng-seed 5 --out " + dir.string()).code == 0);
    CHECK(snapshot(dir) == first);

    const auto other = scratch("rerun_jobs");
    REQUIRE(cli("all" + fixture_args() + " --rng-seed 5 --jobs 3 --out " + other.string()).code == 0);
    CHECK(read_file(other / "glmm/fit.json") == first.at("glmm/fit.json"));
    CHECK(read_file(other / "sample/schools.tsv") == first.at("sample/schools.tsv"));
}

TEST_CASE("configuration file with command-line override")
{
    const auto dir = scratch("config");
    const auto cfg = dir / "run.toml";
    sentrend::write_file_atomic(cfg, "rng-seed = 77\ncap = 40\nseed-batch = 5\n");
    const auto args = " --comments " + (kFixtures / "comments.jsonl").string() + " --out " + dir.string();
    REQUIRE(cli("ingest" + args).code == 0);
    REQUIRE(cli("graph" + args).code == 0);
    REQUIRE(cli("sample --config " + cfg.string() + " --cap 50" + args).code == 0);
    const auto manifest = read_file(dir / "sample/manifest.json");
    CHECK(manifest.find("\"rng_seed\": 77") != std::string::npos);
    const auto schools = read_file(dir / "sample/schools.tsv");
    CHECK(schools.find("\tu00\t60\t50\t") != std::string::npos);
}

TEST_CASE("sampling a large school yields exactly the cap")
{
    const auto dir = scratch("large");
    sentrend::Xoshiro256 rng(8);
    std::ostringstream out;
    const std::int64_t start = 1567296000;  // 2019-09-01
    for (std::uint64_t i = 0; i < 45000; ++i) {
        out << "{\"msg_id\":\"m" << i << "\",\"school_id\":\"big\",";
        if (i > 0 && rng.uniform() < 0.7)
            out << "\"parent_id\":\"m" << rng.below(i) << "\",";
        out << "\"created_utc\":" << start + static_cast<std::int64_t>(i) * 60 << ",\"body\":\"x\"}\n";
    }
    sentrend::write_file_atomic(dir / "big.jsonl", out.str());
    const auto args = " --comments " + (dir / "big.jsonl").string() + " --out " + dir.string();
    REQUIRE(cli("ingest" + args).code == 0);
    REQUIRE(cli("graph" + args).code == 0);
    REQUIRE(cli("sample --cap 30000" + args).code == 0);
    CHECK(line_count(read_file(dir / "sample/school_0000.nodes.tsv")) == 30000);
    CHECK(read_file(dir / "sample/schools.tsv").find("\tbig\t45000\t30000\t") != std::string::npos);
}
