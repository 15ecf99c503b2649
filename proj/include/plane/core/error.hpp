#pragma once

#include <stdexcept>
#include <string>

namespace plane {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& message) {
  if (!cond) throw Error(message);
}

}  // namespace plane
