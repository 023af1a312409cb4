#pragma once

#include <stdexcept>
#include <string>

namespace traceconf {

// Bad arguments, malformed structures, contract violations. CLI exit code 1.
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Unparseable input data; message carries file/line context.
struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / transport failures. CLI exit code 2.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace traceconf
