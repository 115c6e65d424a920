// Copyright 2026 The PISNet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace pisnet {

// Base class for all library errors. Subclasses map onto the CLI exit
// codes: NumericError -> 3, everything else -> 2 (data), usage -> 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor rank/dimension disagreement, channel mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, zero-norm vectors, diverging losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Degenerate box layouts (a box maps to less than one feature cell).
class LayoutError : public Error {
 public:
  using Error::Error;
};

// Rejection sampling during composition exhausted its attempt budget.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// Dataset ingestion problems: empty directory, duplicate file names.
class IngestError : public Error {
 public:
  using Error::Error;
};

// Batch construction cannot satisfy the pairing constraints.
class BatchError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint version mismatch or corrupt container.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Retrieval protocol violations: empty gallery, untrained model.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// File system failures outside checkpoints (images, manifests, reports).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pisnet
