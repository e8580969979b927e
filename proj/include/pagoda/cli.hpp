#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

namespace pagoda::cli {

// Exit codes: 0 ok, 2 usage, 3 missing prerequisite, 4 numeric failure.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PrereqError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int exit_code_for_exception(const std::exception& e);

/// Applies "a.b.c=value" style overrides (values parsed as JSON when
/// possible, else kept as strings).
void apply_override(nlohmann::json& config, const std::string& kv);

/// Resolved output directory: --out flag > PGDA_OUT env > config out_dir >
/// "pagoda_out".
std::string resolve_out_dir(const nlohmann::json& config, const std::string& flag_out);

/// Runs one named command. Returns the summary JSON (also written to
/// <out>/summary_<command>.json atomically).
nlohmann::json run_command(const std::string& command, nlohmann::json config);

/// Summary JSONs are schema-stable; this validates one against the bundled
/// schema (structural subset: type / required / properties).
void validate_summary(const nlohmann::json& summary, const nlohmann::json& schema);
nlohmann::json builtin_summary_schema();

std::string usage_text();

} // namespace pagoda::cli
