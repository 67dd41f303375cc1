#include "p2im/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

#include "p2im/errors.hpp"

namespace p2im {

namespace log {

namespace {
std::atomic<Level> g_level{Level::warn};
std::mutex g_mutex;

const char* tag(Level l) {
  switch (l) {
  case Level::debug: return "debug";
  case Level::info: return "info";
  case Level::warn: return "warning";
  case Level::error: return "error";
  }
  return "?";
}
} // namespace

void set_level(Level l) { g_level = l; }
Level level() { return g_level; }

void write(Level l, std::string_view message) {
  if (l < g_level.load())
    return;
  std::lock_guard lock(g_mutex);
  std::cerr << "p2im: " << tag(l) << ": " << message << '\n';
}

} // namespace log

std::string describe(const std::exception& e) {
  std::string out = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    out += ": " + describe(inner);
  } catch (...) {
    out += ": unknown exception";
  }
  return out;
}

} // namespace p2im
