#pragma once

#include <filesystem>
#include <string_view>

#include <json.hpp>

namespace arise {

/// Parses a JSON file, or a YAML file when the extension is .yaml or .yml.
nlohmann::json load_document(const std::filesystem::path& path);

/// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_file_atomically(const std::filesystem::path& path, std::string_view contents);

}  // namespace arise
