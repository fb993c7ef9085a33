#pragma once

#include <stdexcept>
#include <string>

namespace tabshot {

// Base of every exception thrown by the library. Each module derives a typed
// error carrying a module-specific kind enum.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename Kind>
class TypedError : public Error {
public:
    TypedError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace tabshot
