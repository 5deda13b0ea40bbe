#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsimpute {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

}  // namespace tsimpute
