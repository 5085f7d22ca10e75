#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace koa::text {

// Splits one delimited line. Fields may be double-quoted; "" inside a quoted
// field is a literal quote.
std::vector<std::string> split_fields(std::string_view line, char delim = ',');

std::string_view trim(std::string_view s) noexcept;

// Strict whole-field parse. Returns nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view field);
std::optional<long long> parse_int(std::string_view field);

// True for the spellings accepted as a missing scalar: "", "NA", "NaN", "nan", ".".
bool is_missing_token(std::string_view field) noexcept;

// Shortest text with 17 significant digits; round-trips any finite double.
std::string format_double17(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

std::string hex64(unsigned long long v);

}  // namespace koa::text
