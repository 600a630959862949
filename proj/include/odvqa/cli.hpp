#pragma once

#include <iosfwd>
#include <string>
#include <vector>

// Command-line front end: train, score, evaluate, gradcheck, synth.
// Exit codes: 0 success, 1 verification or runtime failure, 2 invalid
// configuration or input, 3 video too short for the clip sampling.

namespace odvqa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBounds = 3;

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace odvqa
