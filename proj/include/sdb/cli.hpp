#pragma once

#include <string>
#include <vector>

namespace sdb::cliapp {

// Entry point shared by the binary and the tests. Returns the process exit
// status: 0 success, 1 failed run (diagnostics on stderr), 2 usage error.
int run(std::vector<std::string> args);

}  // namespace sdb::cliapp
