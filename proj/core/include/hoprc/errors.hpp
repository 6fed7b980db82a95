#pragma once

#include <stdexcept>
#include <string>

namespace hoprc {

// Tensor shape / dimension mismatch.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent input data (bad records, missing fields,
// unanswerable samples where an answer is required).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hoprc
