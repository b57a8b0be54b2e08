// SPDX-License-Identifier: Apache-2.0
#include "fedmn/cli.hpp"

int main(int argc, char** argv) { return fedmn::cli_main(argc, argv); }
