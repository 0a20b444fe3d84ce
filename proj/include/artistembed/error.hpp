#pragma once

#include <stdexcept>
#include <string>

namespace artistembed {

/// Library-wide exception. The message starts with a short fixed diagnostic
/// (e.g. "clip too short") that callers and tests can match on, optionally
/// followed by ": " and context.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  Error(const std::string& what, const std::string& context)
      : std::runtime_error(what + ": " + context) {}
};

}  // namespace artistembed
