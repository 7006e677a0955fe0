#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ginv {

// Thrown when an input file or stream is malformed (bad magic, truncation,
// checksum mismatch, ...).
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a documented API contract is violated (shape mismatch,
// out-of-range budget, incompatible checkpoint, ...).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& what) : std::runtime_error(what) {}
};

#define GINV_CHECK(cond, msg)                                                  \
    do {                                                                       \
        if (!(cond)) throw ::ginv::contract_error(std::string(msg));           \
    } while (0)

inline constexpr int kImageSide = 28;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr int kNumClasses = 10;

}  // namespace ginv
