#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sentrend {

/// Input that violates a declared schema or configuration contract.
class ValidationError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

namespace csv {

/// Splits one CSV record. Handles double-quoted fields with "" escapes;
/// records spanning several lines are not supported.
std::vector<std::string> split(std::string_view line);

/// Quotes a field only when it contains a delimiter, quote or newline.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

} // namespace csv

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

/// Fixed-point formatting with the given number of decimals.
std::string format_fixed(double v, int decimals);

} // namespace sentrend
