#pragma once

#include <stdexcept>
#include <string>

namespace modalign {

// Every module reports failures through this hierarchy. kind() is the stable
// machine-readable tag printed by the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define MODALIGN_DEFINE_ERROR(Name, tag)                                   \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what) : Error(tag, what) {}      \
    };

MODALIGN_DEFINE_ERROR(LoadError, "load")
MODALIGN_DEFINE_ERROR(ParseError, "parse")
MODALIGN_DEFINE_ERROR(ValidationError, "validation")
MODALIGN_DEFINE_ERROR(GeometryError, "geometry")
MODALIGN_DEFINE_ERROR(ShapeError, "shape")
MODALIGN_DEFINE_ERROR(NumericError, "numeric")
MODALIGN_DEFINE_ERROR(ConfigError, "config")
MODALIGN_DEFINE_ERROR(CompatibilityError, "compatibility")
MODALIGN_DEFINE_ERROR(IoError, "io")
MODALIGN_DEFINE_ERROR(TrainingError, "training")
MODALIGN_DEFINE_ERROR(ContractError, "contract")

#undef MODALIGN_DEFINE_ERROR

}  // namespace modalign
