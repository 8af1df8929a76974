#pragma once

#include <optional>
#include <string>

namespace prefopt {

/// Shortest decimal representation that round-trips the double exactly.
std::string format_double(double v);

double parse_double(const std::string& s);

/// Whole-file read; throws ParseError when the file cannot be opened.
std::string read_file(const std::string& path);

/// Write-temp-then-rename so readers never observe a partial file.
void atomic_write(const std::string& path, const std::string& content);

}  // namespace prefopt
