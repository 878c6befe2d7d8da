#pragma once

#include <spdlog/spdlog.h>

namespace cgate {

// Reads CGATE_LOG (off|info|debug) once and configures the default logger.
void init_logging();
// Library logger; configures itself from CGATE_LOG on first use.
spdlog::logger& logger();

}  // namespace cgate
