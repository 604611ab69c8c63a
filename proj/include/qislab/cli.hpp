#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qislab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `qislab` tool. args excludes the program name. Normal
/// output goes to `out`, one-line diagnostics to `err`; `in` feeds
/// `stream --input -`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in);

}  // namespace qislab
