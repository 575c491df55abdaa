#pragma once

#include <string>

#include "error.hpp"
#include "run_config.hpp"

namespace itnet {

/// Each command validates its paths before doing work, writes its outputs
/// atomically and returns a short human-readable summary.
std::string run_generate(const RunConfig& cfg);
std::string run_train(const RunConfig& cfg);
std::string run_eval(const RunConfig& cfg);
std::string run_align(const RunConfig& cfg);
std::string run_command(Command c, const RunConfig& cfg);

/// 2 configuration, 3 IO, 4 numerical.
int exit_code_for(ErrorCode code);

}  // namespace itnet
