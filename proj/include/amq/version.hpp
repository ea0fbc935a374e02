#pragma once

namespace amq {

inline constexpr const char* kCodeVersion = "0.1.0";

}  // namespace amq
