#pragma once

namespace xal {

// Entry point behind the `xal` binary; returns the process exit status.
// 0 success, 1 runtime failure, 2 usage error, 3 validation/config error.
int cli_main(int argc, const char* const* argv);

}  // namespace xal
