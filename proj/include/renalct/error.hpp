#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace renalct {

// Values double as CLI exit codes.
enum class ErrorKind : int {
    config = 2,
    data = 3,
    backend = 4,
    not_computable = 5,
};

inline std::string_view error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config: return "config_error";
    case ErrorKind::data: return "data_error";
    case ErrorKind::backend: return "backend_error";
    case ErrorKind::not_computable: return "not_computable";
    }
    return "error";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string &message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &message) {
    throw Error(kind, message);
}

} // namespace renalct
