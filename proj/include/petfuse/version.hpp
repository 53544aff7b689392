#pragma once

namespace petfuse {

inline constexpr const char* kEngineVersion = "0.1.0";

}  // namespace petfuse
