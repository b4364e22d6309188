#pragma once

#include <stdexcept>
#include <string>

namespace pft {

enum class ErrorKind {
  usage,     // bad argument or configuration value
  shape,     // tensor shape / dimension mismatch
  range,     // index or value outside its domain
  numeric,   // non-finite value, divergence
  io,        // file system failure
  format,    // malformed file contents
  digest,    // configuration digest mismatch
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace pft
