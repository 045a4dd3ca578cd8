#pragma once

/// Entry point shared by the latent-atlas binary and the CLI tests. Returns
/// the process exit code: 0 success, 2 usage error, 3 numeric failure,
/// 4 I/O error.
int run_cli(int argc, const char* const* argv);
