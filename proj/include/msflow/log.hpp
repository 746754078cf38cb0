#pragma once

#include <atomic>
#include <functional>
#include <iostream>
#include <string>

namespace msf {

// Warnings go to stderr unless a sink is installed (tests capture them).
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink;
  return sink;
}

inline void warn(const std::string& msg) {
  if (auto& sink = warning_sink()) {
    sink(msg);
  } else {
    std::cerr << "[msflow] warning: " << msg << '\n';
  }
}

inline bool& verbose_flag() {
  static bool v = false;
  return v;
}

inline void info(const std::string& msg) {
  if (verbose_flag()) std::cerr << "[msflow] " << msg << '\n';
}

}  // namespace msf
