// Command-line front end: prepare, train, calibrate, replay, sweep, synth.
#pragma once

#include <ostream>

namespace prpm {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingArtifact = 3;
inline constexpr int kExitData = 4;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace prpm
