#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slidestream {

/// Stable, machine-readable error classes. The names returned by
/// `code_name` appear verbatim in HTTP error bodies and CLI diagnostics.
enum class Errc {
  validation,
  level_out_of_range,
  tile_out_of_range,
  out_of_bounds,
  domain,
  unsupported,
  not_found,
  slide_not_found,
  session_not_found,
  conflict,
  corrupt,
  io,
  payload_too_large,
  index_required,
  timeout,
  upstream,
  config,
  connection,
  address_in_use,
  internal,
};

std::string_view code_name(Errc code) noexcept;

/// HTTP status an error class maps to.
int http_status(Errc code) noexcept;

/// Process exit code an error class maps to (see README for the table).
int exit_code(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace slidestream
