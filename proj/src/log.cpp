#include "cgate/log.hpp"

#include <cstdlib>
#include <mutex>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace cgate {

void init_logging() {
  static std::once_flag once;
  std::call_once(once, [] {
    auto logger = spdlog::stderr_color_mt("cgate");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");
    const char* env = std::getenv("CGATE_LOG");
    const std::string_view level = env ? env : "off";
    if (level == "debug") {
      spdlog::set_level(spdlog::level::debug);
    } else if (level == "info") {
      spdlog::set_level(spdlog::level::info);
    } else {
      spdlog::set_level(spdlog::level::warn);
    }
    if (level == "off") spdlog::set_level(spdlog::level::off);
  });
}

spdlog::logger& logger() {
  init_logging();
  return *spdlog::default_logger_raw();
}

}  // namespace cgate
