#pragma once

namespace qbipw {

inline constexpr const char* version = "0.1.0";

}  // namespace qbipw
