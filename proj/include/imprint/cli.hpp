#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace imprint {

/// Command-line entry point. `args` excludes the program name. Returns 0 on
/// success, 2 for usage or configuration errors, 1 for runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Every file below `dir` (recursively) with its SHA-256, sorted by relative path.
std::vector<std::pair<std::string, std::string>> hash_tree(const std::filesystem::path& dir);

} // namespace imprint
