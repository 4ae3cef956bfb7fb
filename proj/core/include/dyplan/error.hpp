#pragma once

#include <stdexcept>
#include <string>

namespace dyplan {

// Root of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments, detected before any work is done.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input data: JSONL lines, datasets, index files, response bodies.
class ParseError : public Error {
public:
    using Error::Error;
};

// Input that parses but violates a data invariant (empty dataset, incomplete table...).
class DataError : public Error {
public:
    using Error::Error;
};

// Network failure or non-2xx response. The only retryable error kind.
class TransportError : public Error {
public:
    using Error::Error;
};

// Scripted backend has no entry for a request.
class ScriptMissError : public Error {
public:
    using Error::Error;
};

// Response cache file is unreadable or inconsistent.
class CacheError : public Error {
public:
    using Error::Error;
};

}  // namespace dyplan
