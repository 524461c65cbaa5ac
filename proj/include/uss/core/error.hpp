#pragma once

#include <stdexcept>
#include <string>

namespace uss {

// All contract violations and recoverable failures surface as uss::Error.
// The CLI maps these to single-line "error: <what>" messages and a nonzero
// exit code.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected during graph execution; carries the primitive name.
class NumericError : public Error {
public:
  NumericError(const std::string& primitive, const std::string& detail)
      : Error("numeric failure in '" + primitive + "': " + detail),
        primitive_(primitive) {}
  const std::string& primitive() const { return primitive_; }

private:
  std::string primitive_;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace uss
