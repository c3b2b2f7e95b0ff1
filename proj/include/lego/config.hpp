#pragma once

#include <filesystem>
#include <string_view>

#include <json.hpp>

namespace lego {

// Parses the TOML subset used by experiment files into a JSON object:
// [table] headers (dotted names allowed), key = value pairs, strings,
// integers, floats, booleans, arrays of those, and # comments.
nlohmann::json parse_toml(std::string_view text, const std::string& source = "<string>");

// Reads a .json file as JSON and anything else as the TOML subset.
nlohmann::json load_config_file(const std::filesystem::path& path);

}  // namespace lego
