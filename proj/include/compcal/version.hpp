#pragma once

namespace compcal {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace compcal
