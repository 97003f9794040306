#pragma once

#include <string>

namespace seqforge::logging {

// Verbosity order: quiet < warn < info < debug.
// SEQFORGE_LOG selects the threshold by name; default is info.
enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

Level threshold();
bool enabled(Level lvl);

// key=value structured lines; warn goes to stderr, info/debug to stdout
void warn(const std::string& line);
void info(const std::string& line);
void debug(const std::string& line);

}  // namespace seqforge::logging
