#pragma once

namespace ahiv {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ahiv
