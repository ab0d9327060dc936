#pragma once

// Command-line front end: gen-data, train, ismr, inject, bench, report.
// Exit codes: 0 success, 1 compute failure, 2 usage or config error.

#include <iosfwd>

#include <json.hpp>

namespace prism::cli {

/// Every config section with built-in defaults.
nlohmann::json default_config();

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace prism::cli
