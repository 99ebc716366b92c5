// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace harmoclip {

/// Caller handed us data that violates an operation precondition
/// (shape mismatch, out-of-range index, invalid box, empty batch).
class InputError : public std::invalid_argument {
public:
    explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// A configuration value is out of its legal range.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// An input file could not be parsed. Carries a byte offset when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, long byte_offset = -1)
        : std::runtime_error(byte_offset >= 0
                                 ? what + " (byte offset " + std::to_string(byte_offset) + ")"
                                 : what),
          offset(byte_offset) {}
    long offset;
};

/// A numerical operation left its mathematical domain (e.g. cosine of a
/// zero-norm vector).
class NumericalDomainError : public std::domain_error {
public:
    explicit NumericalDomainError(const std::string& what) : std::domain_error(what) {}
};

/// A dataset build produced no usable samples.
class EmptyCorpusError : public std::runtime_error {
public:
    explicit EmptyCorpusError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss; the harness aborts the run.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, long at_step)
        : std::runtime_error(what + " (step " + std::to_string(at_step) + ")"), step(at_step) {}
    long step;
};

}  // namespace harmoclip
