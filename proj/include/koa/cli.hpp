#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace koa {

// Entry point of the `koa` command. Returns the process exit status; errors
// are reported on `err` as "error: category=<name> ..." lines.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace koa
