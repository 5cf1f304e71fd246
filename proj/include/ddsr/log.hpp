#pragma once

#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace ddsr {

/// Library-wide logger writing to stderr. Name: "ddsr".
inline spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    if (auto existing = spdlog::get("ddsr")) return existing;
    auto l = spdlog::stderr_color_mt("ddsr");
    l->set_pattern("[%l] %v");
    return l;
  }();
  return *instance;
}

}  // namespace ddsr
