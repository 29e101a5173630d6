#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sabm::cli {

/// Entry point of the `sabm` tool. Returns the process exit code:
/// 0 success, 1 runtime failure or aborted run, 2 usage error.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sabm::cli
