#include "acpf_adv/log.hpp"

#include <cstdlib>
#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace acpf_adv {

spdlog::logger& log() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto logger = spdlog::stderr_color_mt("acpf_adv");
        auto level = spdlog::level::warn;
        if (const char* env = std::getenv("ACPF_ADV_LOG")) {
            level = spdlog::level::from_str(env);
        }
        logger->set_level(level);
        logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
        return logger;
    }();
    return *instance;
}

}  // namespace acpf_adv
