// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace idfc {

// Single exception type for the whole library. The kind tag lets callers
// (and tests) distinguish failure classes without parsing messages.
class Error : public std::runtime_error {
public:
    enum class Kind {
        ShapeMismatch,
        InvalidArgument,
        NumericFailure,
        Io,
        Parse,
        BadMagic,
        VersionMismatch,
        Truncated,
        CorruptRecord,
    };

    Error(Kind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

[[noreturn]] inline void raise(Error::Kind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace idfc
