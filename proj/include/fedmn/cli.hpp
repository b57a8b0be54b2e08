// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace fedmn {

/// Entry point behind the `fedmn` binary. Subcommands: run, compare,
/// decisions-report, validate-config. Returns 0 on success, 2 on config or
/// usage errors, 3 on IO errors, 1 on anything else.
int cli_main(int argc, char** argv);

}  // namespace fedmn
