#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace drm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitConvergence = 3;

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

/// Runs one subcommand (`ingest`, `causal`, `score`, `fit-glm`, `predict`,
/// `report`, `synth`). args excludes the program name. Never throws.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, const char* const* argv);

/// `key = value` lines; blank lines and lines starting with '#' are
/// skipped. Keys are long flag names without the leading dashes. Throws
/// std::invalid_argument on a malformed line or a repeated key.
std::map<std::string, std::string> parse_config_text(std::string_view text);

}  // namespace drm::cli
