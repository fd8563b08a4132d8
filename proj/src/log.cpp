#include "fairspec/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

#include <cstdlib>
#include <string_view>

namespace fairspec {

void init_logging_from_env() {
    auto logger = spdlog::stderr_color_mt("fairspec");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("FAIRSPEC_LOG")) {
        const std::string_view level(env);
        if (level == "error") spdlog::set_level(spdlog::level::err);
        else if (level == "debug") spdlog::set_level(spdlog::level::debug);
        else if (level != "info") spdlog::warn("FAIRSPEC_LOG={} not recognized, using info", level);
    }
}

}  // namespace fairspec
