#pragma once

namespace spectrumfm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace spectrumfm
