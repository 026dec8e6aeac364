#pragma once

// Placeholder during bring-up; the real subcommand table lands with the I/O
// layer.

namespace ptycho {

int cli_main(int argc, char** argv);

inline int cli_main(int, char**) { return 0; }

} // namespace ptycho
