#pragma once

#include <stdexcept>
#include <string>

namespace comet {

// Every failure raised by the library derives from CometError so callers can
// catch the whole family; the concrete type names the contract that broke.
class CometError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed bytes or structure in an input file.
class FormatError : public CometError {
public:
    explicit FormatError(const std::string& what) : CometError("FormatError: " + what) {}
};

// Values that are well-formed but unusable (NaN, empty, shape mismatch).
class DataError : public CometError {
public:
    explicit DataError(const std::string& what) : CometError("DataError: " + what) {}
};

// Configuration or column schema does not match the data.
class SchemaError : public CometError {
public:
    explicit SchemaError(const std::string& what) : CometError("SchemaError: " + what) {}
};

class TreeError : public CometError {
public:
    explicit TreeError(const std::string& what) : CometError("TreeError: " + what) {}
};

class SplitError : public CometError {
public:
    explicit SplitError(const std::string& what) : CometError("SplitError: " + what) {}
};

class SingularError : public CometError {
public:
    explicit SingularError(const std::string& what) : CometError("SingularError: " + what) {}
};

class PredictorError : public CometError {
public:
    explicit PredictorError(const std::string& what) : CometError("PredictorError: " + what) {}
};

// A fusion spec references something the dataset does not have.
class SpecError : public CometError {
public:
    explicit SpecError(const std::string& what) : CometError("SpecError: " + what) {}
};

}  // namespace comet
