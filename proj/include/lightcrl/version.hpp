#pragma once

namespace lightcrl {

inline constexpr const char* kBuildId = "lightcrl-1.0.0";

} // namespace lightcrl
