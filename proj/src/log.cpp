#include "seqforge/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace seqforge::logging {

Level threshold() {
  static Level lvl = [] {
    const char* e = std::getenv("SEQFORGE_LOG");
    if (!e) return Level::info;
    if (std::strcmp(e, "quiet") == 0) return Level::quiet;
    if (std::strcmp(e, "warn") == 0) return Level::warn;
    if (std::strcmp(e, "debug") == 0) return Level::debug;
    return Level::info;
  }();
  return lvl;
}

bool enabled(Level lvl) { return static_cast<int>(lvl) <= static_cast<int>(threshold()); }

void warn(const std::string& line) {
  if (enabled(Level::warn)) std::fprintf(stderr, "level=warn %s\n", line.c_str());
}

void info(const std::string& line) {
  if (enabled(Level::info)) std::fprintf(stdout, "%s\n", line.c_str());
}

void debug(const std::string& line) {
  if (enabled(Level::debug)) std::fprintf(stdout, "level=debug %s\n", line.c_str());
}

}  // namespace seqforge::logging
