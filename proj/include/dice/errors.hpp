#pragma once

#include <stdexcept>
#include <string>

namespace dice {

// Base class for all library errors. Subclasses carry the failure kind in
// the type so callers can catch selectively; the message carries the detail.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// -- netlist ----------------------------------------------------------------

struct SyntaxError : Error {
    int line;
    SyntaxError(int line_, const std::string& reason)
        : Error("syntax error at line " + std::to_string(line_) + ": " + reason),
          line(line_) {}
};

struct DuplicateDevice : Error {
    explicit DuplicateDevice(const std::string& name)
        : Error("duplicate device name: " + name) {}
};

struct NonPositiveParam : Error {
    explicit NonPositiveParam(const std::string& name)
        : Error("non-positive parameter on device: " + name) {}
};

struct UnknownModel : Error {
    explicit UnknownModel(const std::string& token)
        : Error("unknown MOS model token: " + token) {}
};

// -- circuit graph ----------------------------------------------------------

struct DisconnectedCircuit : Error {
    explicit DisconnectedCircuit(const std::string& what)
        : Error("circuit graph is not weakly connected: " + what) {}
};

struct FloatingTerminal : Error {
    explicit FloatingTerminal(const std::string& net)
        : Error("net has a single floating terminal: " + net) {}
};

struct DegenerateDevice : Error {
    explicit DegenerateDevice(const std::string& name)
        : Error("device has both current-path terminals on one net: " + name) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& what)
        : Error("graph schema error: " + what) {}
};

// -- augmentation -----------------------------------------------------------

struct NoDeviceNodes : Error {
    NoDeviceNodes() : Error("graph has no device nodes to augment") {}
};

struct EmptyCorpus : Error {
    EmptyCorpus() : Error("dataset generation needs a nonempty corpus") {}
};

// -- tensors ----------------------------------------------------------------

struct ShapeMismatch : Error {
    ShapeMismatch(const std::string& op, int ar, int ac, int br, int bc)
        : Error(op + ": shape mismatch (" + std::to_string(ar) + "x" + std::to_string(ac) +
                " vs " + std::to_string(br) + "x" + std::to_string(bc) + ")") {}
};

struct NotScalar : Error {
    NotScalar(int r, int c)
        : Error("backward needs a 1x1 loss, got " + std::to_string(r) + "x" + std::to_string(c)) {}
};

struct DepthParamsMismatch : Error {
    explicit DepthParamsMismatch(const std::string& what)
        : Error("parameters do not match encoder depth: " + what) {}
};

struct ZeroVector : Error {
    explicit ZeroVector(const std::string& where)
        : Error("zero vector in " + where) {}
};

// -- losses / training ------------------------------------------------------

struct EmptyPositiveSet : Error {
    explicit EmptyPositiveSet(int anchor)
        : Error("anchor " + std::to_string(anchor) + " has no in-batch positive") {}
};

struct EmptyPositiveRow : Error {
    explicit EmptyPositiveRow(int row)
        : Error("mask row " + std::to_string(row) + " has no positive entry") {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("numeric failure: " + what) {}
};

struct MissingCheckpoint : Error {
    MissingCheckpoint() : Error("frozen branch depth > 0 but no checkpoint given") {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

}  // namespace dice
