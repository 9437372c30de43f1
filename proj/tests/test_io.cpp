#include "sentrend/io.hpp"
#include "sentrend/rng.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace sentrend;

TEST_CASE("splitmix64 reference values")
{
    std::uint64_t x = 0;
    CHECK(Xoshiro256::splitmix64(x) == 0xe220a8397b1dcdafULL);
    CHECK(Xoshiro256::splitmix64(x) == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("xoshiro is reproducible and bounded")
{
    Xoshiro256 a(99), b(99), c(100);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto va = a(), vb = b(), vc = c();
        CHECK(va == vb);
        differs |= va != vc;
    }
    CHECK(differs);

    Xoshiro256 r(5);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = r.below(7);
        CHECK(v < 7);
        seen.insert(v);
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("sha256 of known strings")
{
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("csv split and escape")
{
    CHECK(csv::split("a,b,,c") == std::vector<std::string>{"a", "b", "", "c"});
    CHECK(csv::split("\"x,y\",\"say \"\"hi\"\"\"\r") == std::vector<std::string>{"x,y", "say \"hi\""});
    CHECK(csv::escape("plain") == "plain");
    CHECK(csv::escape("a,b") == "\"a,b\"");
    CHECK(csv::escape("q\"") == "\"q\"\"\"");
    const std::vector<std::string> fields{"a,b", "c\"d", "e"};
    CHECK(csv::split(csv::join(fields)) == fields);
}

TEST_CASE("number formatting")
{
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5})
        CHECK(std::stod(format_double(v)) == v);
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_fixed(1.23456, 2) == "1.23");
    CHECK(format_fixed(-0.005, 1) == "-0.0");
}

TEST_CASE("atomic write creates parent directories")
{
    const auto dir = std::filesystem::temp_directory_path() / "sentrend_io_test";
    std::filesystem::remove_all(dir);
    write_file_atomic(dir / "a" / "b.txt", "hello");
    CHECK(read_file(dir / "a" / "b.txt") == "hello");
    write_file_atomic(dir / "a" / "b.txt", "bye");
    CHECK(read_file(dir / "a" / "b.txt") == "bye");
    CHECK(sha256_file(dir / "a" / "b.txt") == sha256_hex("bye"));
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "a"))
        ++files;
    CHECK(files == 1);
    CHECK_THROWS(read_file(dir / "missing"));
    std::filesystem::remove_all(dir);
}
