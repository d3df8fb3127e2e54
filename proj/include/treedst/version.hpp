#pragma once

namespace treedst {

inline const char* kVersion = "0.1.0";

}  // namespace treedst
