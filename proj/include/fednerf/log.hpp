#pragma once

namespace fednerf {

/// Configures the spdlog default logger on stderr. Verbosity comes from the
/// FEDNERF_LOG environment variable (trace, debug, info, warn, error, off);
/// the default is info.
void init_logging();

}  // namespace fednerf
