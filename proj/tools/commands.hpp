#pragma once

namespace infocons::cli {

// Parses argv, runs the selected subcommand and maps failures to exit codes:
// 0 success, 2 usage error, 3 data or model error, 4 numeric failure.
int run(int argc, char** argv);

}  // namespace infocons::cli
