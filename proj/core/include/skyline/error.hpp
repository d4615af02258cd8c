#pragma once

#include <stdexcept>
#include <string>

namespace skyline {

enum class Errc {
    EmptyScene,
    MixedHandedness,
    EmptyPointCloud,
    NonFiniteInput,
    ContextMismatch,
    ShapeMismatch,
    ModeMismatch,
    AllMasked,
    DegenerateDistances,
    MissingClass,
    DegenerateFit,
    EmptyVolume,
    MissingDepth,
    MissingChunkModel,
    NonFiniteLoss,
    ParseError,
    ClassTagMissing,
    IoError,
};

inline const char* errc_name(Errc c) {
    switch (c) {
    case Errc::EmptyScene: return "EmptyScene";
    case Errc::MixedHandedness: return "MixedHandedness";
    case Errc::EmptyPointCloud: return "EmptyPointCloud";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::ContextMismatch: return "ContextMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ModeMismatch: return "ModeMismatch";
    case Errc::AllMasked: return "AllMasked";
    case Errc::DegenerateDistances: return "DegenerateDistances";
    case Errc::MissingClass: return "MissingClass";
    case Errc::DegenerateFit: return "DegenerateFit";
    case Errc::EmptyVolume: return "EmptyVolume";
    case Errc::MissingDepth: return "MissingDepth";
    case Errc::MissingChunkModel: return "MissingChunkModel";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::ParseError: return "ParseError";
    case Errc::ClassTagMissing: return "ClassTagMissing";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

} // namespace skyline
