#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace abacus {

/// Subcommands: eval, augment, ingest, serve. Returns 0 on success, 2 on a usage
/// error (message names the offending flag), 1 on a runtime failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

} // namespace abacus
