#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace uqvol::detail {

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace uqvol::detail
