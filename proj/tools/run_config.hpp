#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace evdet::cli {

/// key=value lines; blank lines and lines starting with '#' are ignored.
/// Keys are flag names without the leading dashes.
struct RunConfig {
  std::map<std::string, std::string> values;
};

/// Throws Error(kFormatError) on a malformed line or a repeated key and
/// Error(kIoFailure) when the file cannot be read.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Throws Error(kInvalidArgument) naming the first key not in `known`.
void check_keys(const RunConfig& config, const std::set<std::string>& known, const std::string& context);

/// Builds "--key=value" arguments, in key order.
std::vector<std::string> to_arguments(const RunConfig& config);

}  // namespace evdet::cli
