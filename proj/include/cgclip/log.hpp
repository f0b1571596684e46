#pragma once

#include <iostream>
#include <string>

namespace cgclip {

// Warnings go to stderr; quiet mode is used by tests and the acceptance runner.
inline bool& quiet_warnings() {
  static bool quiet = false;
  return quiet;
}

inline void warn(const std::string& msg) {
  if (!quiet_warnings()) std::cerr << "warning: " << msg << '\n';
}

}  // namespace cgclip
