#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/error.hpp"

namespace dyfn::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kRunManifestName = "run_manifest.json";

enum ExitCode : int { kOk = 0, kInternal = 1, kBadArgs = 2, kIo = 3, kNumeric = 4 };

int exit_code_for(ErrorKind kind) noexcept;

/// Provenance record written once into every output directory.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version{kToolVersion};
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;  // relative to the output directory
  std::string started_at;
  std::string finished_at;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

/// Hash over the canonical dump of `config` and the contents of each input.
std::string config_hash(const nlohmann::json& config, const std::vector<std::filesystem::path>& inputs);

/// Writes run_manifest.json, listing every regular file under `dir`.
void write_run_manifest(const std::filesystem::path& dir, RunManifest m);

/// Runs one subcommand. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace dyfn::cli
