#pragma once

#include <stdexcept>
#include <string>

namespace evt {

// Raised for malformed or inconsistent input data (files, streams, datasets).
// The CLI maps it to exit code 2; std::invalid_argument stays a usage error.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace evt
