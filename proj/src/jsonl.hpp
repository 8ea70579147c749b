#pragma once

// Line-oriented JSON helpers shared by the loaders. Internal header.

#include <fstream>
#include <functional>
#include <string>

#include "json.hpp"

namespace fairsearch::detail {

using nlohmann::json;

// Calls fn(object, line_number) for each non-blank line. Parse failures and
// non-object lines become ValidationError naming the line.
void for_each_jsonl(const std::string& path,
                    const std::function<void(const json&, std::size_t)>& fn);

std::ofstream open_for_write(const std::string& path);

// Checked field access; errors mention the line number.
std::string string_field(const json& obj, const char* key, std::size_t line);

// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace fairsearch::detail
