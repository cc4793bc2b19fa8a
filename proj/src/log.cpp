#include "fednerf/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace fednerf {

void init_logging() {
  if (!spdlog::get("fednerf")) spdlog::set_default_logger(spdlog::stderr_color_mt("fednerf"));
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* env = std::getenv("FEDNERF_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

}  // namespace fednerf
