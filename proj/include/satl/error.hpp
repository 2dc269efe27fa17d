#pragma once

#include <stdexcept>
#include <string>

namespace satl {

// Base for all library failures. Subclasses exist so callers (and tests) can
// distinguish misuse categories; the CLI maps any Error to exit code 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not admit the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// Invalid static configuration (model geometry, option values, config keys).
struct ConfigError : Error {
    using Error::Error;
};

// An API precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Token id outside the vocabulary table.
struct VocabError : Error {
    using Error::Error;
};

// Input exceeds the model's maximum sequence length.
struct TruncationError : Error {
    using Error::Error;
};

// Malformed textual input; `offset` is the byte position of the defect.
struct ParseError : Error {
    std::size_t offset;
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte " + std::to_string(byte_offset) + ")"), offset(byte_offset) {}
};

// Structurally invalid data (cyclic heads, multiple roots, bad columns).
struct ValidityError : Error {
    using Error::Error;
};

// Missing or mismatched data sources (absent treebank, ragged alignment).
struct DataError : Error {
    using Error::Error;
};

// Corpus files that are supposed to be aligned disagree in length or tokens.
struct AlignmentError : Error {
    using Error::Error;
};

// Bad serialized container (magic, version, lengths).
struct FormatError : Error {
    using Error::Error;
};

// Serialized payload inconsistent with its own header.
struct IntegrityError : Error {
    using Error::Error;
};

// Sampling requested from an empty pool.
struct SamplingError : Error {
    using Error::Error;
};

// Operation not available in the current training mode.
struct ModeError : Error {
    using Error::Error;
};

}  // namespace satl
