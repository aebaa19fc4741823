#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace comca {

using WarningHandler = std::function<void(const std::string&)>;

// Routes a warning to the installed handler (stderr by default).
void warn(const std::string& message);

// Returns the previous handler.
WarningHandler set_warning_handler(WarningHandler handler);

void set_verbose(bool verbose);
bool verbose();
void info(const std::string& message);

// Installs a counting handler for the lifetime of the object; restores the
// previous one on destruction.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  std::size_t count() const { return count_; }
  const std::string& last() const { return last_; }

 private:
  WarningHandler previous_;
  std::size_t count_ = 0;
  std::string last_;
};

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits. Used for prompt and
/// config fingerprints, which must be stable across platforms.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace comca
