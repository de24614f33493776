#pragma once

namespace hourglass {

inline constexpr const char* kVersion = "0.1.0";

}
