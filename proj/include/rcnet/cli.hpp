#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rcnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitBadArguments = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitFormat = 4;

inline constexpr const char* kBankFile = "bank.rcnb";
inline constexpr const char* kHeadsFile = "heads.rchd";
inline constexpr const char* kLossFile = "loss.csv";

// Entry point for `rcnet <command> [flags]`; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// Requested worker count, capped by RCNET_THREADS when it is set.
unsigned effective_threads(unsigned requested);

}  // namespace rcnet::cli
