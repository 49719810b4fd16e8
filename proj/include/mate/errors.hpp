#pragma once

#include <stdexcept>
#include <string>

namespace mate {

// Error categories map 1:1 onto CLI exit codes (see tools/mate.cpp).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace mate
