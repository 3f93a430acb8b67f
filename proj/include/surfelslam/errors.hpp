// Copyright Contributors to the surfelslam Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>
#include <string>

namespace surfelslam {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rotation angle at (or numerically at) pi: the log map has no unique principal value.
class BranchAmbiguityError : public Error {
public:
    using Error::Error;
};

/// Point configuration cannot determine the requested quantity (collinear, coincident, zero norm).
class DegenerateConfigurationError : public Error {
public:
    using Error::Error;
};

/// Conditioned re-prediction produced clouds that disagree (non-positive relative scale).
class RelocalizationInconsistencyError : public Error {
public:
    using Error::Error;
};

/// Current frame does not overlap the requested historical submap.
class InsufficientOverlapError : public Error {
public:
    using Error::Error;
};

/// Normal equations are singular because part of the graph has no gauge anchor.
class SingularSystemError : public Error {
public:
    using Error::Error;
};

/// Invalid user-facing configuration or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable file.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace surfelslam
