#pragma once

#include <spdlog/spdlog.h>

namespace acpf_adv {

/// Shared stderr logger. Level comes from ACPF_ADV_LOG (trace, debug, info,
/// warn, error, off); default is warn.
spdlog::logger& log();

}  // namespace acpf_adv
