// Command-line front end. Subcommands are registered in cli.hpp so tests can
// drive the same entry point.

#include "ptycho/cli.hpp"

int main(int argc, char** argv) { return ptycho::cli_main(argc, argv); }
