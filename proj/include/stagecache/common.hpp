#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stagecache {

using std::int64_t;
using std::uint64_t;

/// Memory pool a live allocation belongs to. Fast models device memory,
/// Slow models host memory; in this build both are host RAM with separate
/// ledgers.
enum class Tier : int { Fast = 0, Slow = 1 };

/// Pipeline stage an event is attributed to.
enum class StageTag : int { Setup = 0, Encode = 1, Denoise = 2, Decode = 3 };

inline const char* to_string(Tier t) { return t == Tier::Fast ? "fast" : "slow"; }

inline const char* to_string(StageTag s) {
    switch (s) {
        case StageTag::Setup: return "setup";
        case StageTag::Encode: return "encode";
        case StageTag::Denoise: return "denoise";
        case StageTag::Decode: return "decode";
    }
    return "?";
}

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration or malformed user input. CLI exit code 2.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// A fast-tier budget would be exceeded. CLI exit code 3.
struct BudgetError : Error {
    StageTag stage;
    BudgetError(StageTag s, const std::string& msg) : Error(msg), stage(s) {}
};

/// Internal contract violated (ledger imbalance, malformed timeline, ...).
/// CLI exit code 4.
struct InvariantError : Error {
    explicit InvariantError(const std::string& msg) : Error(msg) {}
};

/// Shape or geometry mismatch between operands.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

}  // namespace stagecache
