#pragma once

#include <stdexcept>

namespace irview {

/// Tensor, raster or vector dimensions do not match what an operation needs.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An argument lies outside the domain of an operation (bad angle, fraction, perplexity...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A keyed lookup (embedding table, checkpoint tensor) failed.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Manifest content violates its invariants (duplicates, missing files, wrong raster size).
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or was asked to run on unusable input.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace irview
