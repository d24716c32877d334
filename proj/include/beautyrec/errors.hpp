#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace beautyrec {

/// A required input file does not exist or cannot be opened.
class MissingFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bytes could not be decoded as the expected image kind.
class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parsing map holds labels that do not map into the canonical label set.
class LabelError : public std::runtime_error {
public:
    LabelError(const std::string& what, std::vector<int> offending)
        : std::runtime_error(what), offending_(std::move(offending)) {}

    const std::vector<int>& offending() const noexcept { return offending_; }

private:
    std::vector<int> offending_;
};

/// Tensor geometry does not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Configuration failed validation. Carries every problem found, not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : std::runtime_error(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string out = "invalid configuration:";
        for (const auto& p : problems) out += "\n  - " + p;
        return out;
    }

    std::vector<std::string> problems_;
};

/// Checkpoint archive is corrupt, has an unknown version, or does not match the expected config.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace beautyrec
