#pragma once

namespace wmu {

/// Command-line entry point. Exit codes: 0 success, 1 usage error,
/// 2 runtime or data error.
int run_cli(int argc, char** argv);

} // namespace wmu
