#include "slidestream/error.hpp"

namespace slidestream {

std::string_view code_name(Errc code) noexcept {
  switch (code) {
    case Errc::validation: return "VALIDATION";
    case Errc::level_out_of_range: return "LEVEL_OUT_OF_RANGE";
    case Errc::tile_out_of_range: return "TILE_OUT_OF_RANGE";
    case Errc::out_of_bounds: return "REGION_OUT_OF_BOUNDS";
    case Errc::domain: return "DOMAIN";
    case Errc::unsupported: return "UNSUPPORTED";
    case Errc::not_found: return "NOT_FOUND";
    case Errc::slide_not_found: return "SLIDE_NOT_FOUND";
    case Errc::session_not_found: return "SESSION_NOT_FOUND";
    case Errc::conflict: return "CONFLICT";
    case Errc::corrupt: return "CORRUPT";
    case Errc::io: return "IO_ERROR";
    case Errc::payload_too_large: return "REGION_TOO_LARGE";
    case Errc::index_required: return "INDEX_REQUIRED";
    case Errc::timeout: return "UPSTREAM_TIMEOUT";
    case Errc::upstream: return "UPSTREAM_ERROR";
    case Errc::config: return "CONFIG";
    case Errc::connection: return "CONNECTION";
    case Errc::address_in_use: return "ADDRESS_IN_USE";
    case Errc::internal: return "INTERNAL";
  }
  return "INTERNAL";
}

int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::validation:
    case Errc::domain:
      return 400;
    case Errc::level_out_of_range:
    case Errc::tile_out_of_range:
    case Errc::out_of_bounds:
    case Errc::not_found:
    case Errc::slide_not_found:
    case Errc::session_not_found:
      return 404;
    case Errc::conflict:
    case Errc::index_required:
      return 409;
    case Errc::payload_too_large: return 413;
    case Errc::unsupported: return 422;
    case Errc::upstream: return 502;
    case Errc::timeout: return 504;
    case Errc::connection: return 503;
    case Errc::corrupt:
    case Errc::io:
    case Errc::config:
    case Errc::address_in_use:
    case Errc::internal:
      return 500;
  }
  return 500;
}

int exit_code(Errc code) noexcept {
  switch (code) {
    case Errc::validation:
    case Errc::domain:
    case Errc::level_out_of_range:
    case Errc::tile_out_of_range:
    case Errc::out_of_bounds:
    case Errc::payload_too_large:
      return 2;
    case Errc::not_found:
    case Errc::slide_not_found:
    case Errc::session_not_found:
      return 3;
    case Errc::conflict: return 4;
    case Errc::corrupt: return 5;
    case Errc::io: return 6;
    case Errc::connection:
    case Errc::timeout:
    case Errc::upstream:
      return 7;
    case Errc::config:
    case Errc::address_in_use:
      return 8;
    case Errc::index_required: return 9;
    case Errc::unsupported: return 10;
    case Errc::internal: return 1;
  }
  return 1;
}

}  // namespace slidestream
