#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include "evdet/error.hpp"

namespace evdet::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kFormatError, "line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    if (key.empty()) throw Error(ErrorCode::kFormatError, "line " + std::to_string(lineno) + ": empty key");
    if (!cfg.values.emplace(key, value).second) {
      throw Error(ErrorCode::kFormatError, "line " + std::to_string(lineno) + ": key '" + key + "' repeated");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void check_keys(const RunConfig& config, const std::set<std::string>& known, const std::string& context) {
  for (const auto& [key, value] : config.values) {
    if (!known.count(key)) throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "' for " + context);
  }
}

std::vector<std::string> to_arguments(const RunConfig& config) {
  std::vector<std::string> args;
  for (const auto& [key, value] : config.values) args.push_back("--" + key + "=" + value);
  return args;
}

}  // namespace evdet::cli
