#ifndef AGENCY_TOOLS_COMMANDS_HPP
#define AGENCY_TOOLS_COMMANDS_HPP

#include "config.hpp"

namespace agency::cli {

// All commands write their outputs (plus a resolved-config echo) into
// config.out_dir and print a short summary to stdout. They throw ConfigError
// for invalid configuration and solver errors otherwise; exit-code mapping
// happens in main.
void cmd_lq(const RunConfig& config);
void cmd_hjb(const RunConfig& config);
void cmd_simulate(const RunConfig& config);
void cmd_nash_check(const RunConfig& config);  // throws NashViolation on failure
void cmd_sensitivity(const RunConfig& config);

}  // namespace agency::cli

#endif  // AGENCY_TOOLS_COMMANDS_HPP
