#pragma once

#include <string>
#include <vector>

namespace drag::cli {

// Entry point behind the `drag` binary. Returns 0 on success, 1 on validation
// errors (bad flags, malformed inputs, failed grad-check threshold), 2 on runtime
// failures.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);  // args without the program name

}  // namespace drag::cli
