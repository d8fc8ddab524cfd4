#pragma once

#include <stdexcept>
#include <string>

namespace silobench {

// Base for everything this library throws. Subtypes let callers (and the
// orchestrator's exclusion bookkeeping) react to specific failure classes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (nonpositive sizes, missing knobs, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input file contents; message carries the row number when known.
struct ParseError : Error {
  using Error::Error;
};

// Input does not match the declared schema (missing column, unknown level).
struct SchemaError : Error {
  using Error::Error;
};

// A record violates a declared invariant (year range, vector length, ...).
struct ValidationError : Error {
  using Error::Error;
};

// Cohort split leaves the train or test partition empty.
struct DegenerateSplitError : Error {
  using Error::Error;
};

// Batch statistics need at least two rows.
struct BatchSizeError : Error {
  using Error::Error;
};

// Forward cache does not belong to the parameters handed to backward.
struct StateError : Error {
  using Error::Error;
};

// Serialized blob is truncated, has a bad magic, or a wrong version.
struct FormatError : Error {
  using Error::Error;
};

// TransferArtifact is missing a required piece (e.g. Fisher with lambda>0).
struct ArtifactError : Error {
  using Error::Error;
};

// Model lacks a structural element an operation needs (e.g. TENT without BN).
struct ArchitectureError : Error {
  using Error::Error;
};

// A metric is mathematically undefined on this input (single-class AUC, ...).
// Raised instead of returning a sentinel; callers record the exclusion.
struct UndefinedMetricError : Error {
  using Error::Error;
};

// Threshold policy cannot be applied (group missing from the map).
struct ThresholdError : Error {
  using Error::Error;
};

// Design matrix is rank deficient.
struct SingularDesignError : Error {
  using Error::Error;
};

// All coefficient-significance weights are zero; normalization impossible.
struct DegenerateWeightsError : Error {
  using Error::Error;
};

}  // namespace silobench
