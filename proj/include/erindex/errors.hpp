#pragma once

#include <stdexcept>
#include <string>

namespace erindex {

/// Malformed input files (FASTA, catalog, index containers).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Decrypted or deserialized payload fails internal consistency checks.
class CorruptionError : public std::runtime_error {
public:
    explicit CorruptionError(const std::string& what) : std::runtime_error(what) {}
};

/// Key management / cipher layer failures.
class CryptoError : public std::runtime_error {
public:
    explicit CryptoError(const std::string& what) : std::runtime_error(what) {}
};

/// Database catalog violations (duplicate ids, missing registrations, ...).
class CatalogError : public std::runtime_error {
public:
    explicit CatalogError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace erindex
