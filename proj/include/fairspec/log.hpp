#pragma once

#include <spdlog/spdlog.h>

namespace fairspec {

/// Sets the spdlog level from FAIRSPEC_LOG (error | info | debug); unset
/// means info. Logs go to stderr so artifacts stay reproducible.
void init_logging_from_env();

}  // namespace fairspec
