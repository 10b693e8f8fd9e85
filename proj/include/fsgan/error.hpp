#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fsgan {

/// Tensor or network dimensions do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A loss, activation or gradient became NaN/Inf.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, int layer = -1, int site = -1)
        : std::runtime_error(what), layer_(layer), site_(site) {}

    int layer() const noexcept { return layer_; }
    int site() const noexcept { return site_; }

    DivergenceError with_site(int site) const {
        return DivergenceError("site " + std::to_string(site) + ": " + what(), layer_, site);
    }

private:
    int layer_;
    int site_;
};

/// Malformed dataset or checkpoint bytes; carries the byte offset of the failure.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Invalid configuration, mixture spec or partition plan.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Evaluating a point where the requested quantity is undefined.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

}  // namespace fsgan
