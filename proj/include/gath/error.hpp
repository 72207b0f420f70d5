#pragma once

#include <stdexcept>
#include <string>

namespace gath {

/// Base of every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI and the HTTP service.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define GATH_DEFINE_ERROR(Name, tag)                                      \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(tag, what) {}      \
    }

GATH_DEFINE_ERROR(ParseError, "parse");
GATH_DEFINE_ERROR(SchemaError, "schema");
GATH_DEFINE_ERROR(DecodeError, "decode");
GATH_DEFINE_ERROR(ChannelError, "channel");
GATH_DEFINE_ERROR(ArityError, "arity");
GATH_DEFINE_ERROR(RangeError, "range");
GATH_DEFINE_ERROR(ShapeError, "shape");
GATH_DEFINE_ERROR(PreconditionError, "precondition");
GATH_DEFINE_ERROR(SamplingError, "sampling");
GATH_DEFINE_ERROR(LabelError, "label");
GATH_DEFINE_ERROR(NonFiniteLossError, "non_finite_loss");
GATH_DEFINE_ERROR(IntegrityError, "integrity");
GATH_DEFINE_ERROR(VersionError, "version");
GATH_DEFINE_ERROR(ConfigError, "config");
GATH_DEFINE_ERROR(IoError, "io");

#undef GATH_DEFINE_ERROR

}  // namespace gath
