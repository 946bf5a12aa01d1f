#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace efft {

/// Entry point behind the `efft` binary. Exit codes: 0 success, 1 usage
/// error, 2 runtime/numeric failure. Every random stream derives from one
/// --seed value (default: the config's train seed).
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

} // namespace efft
