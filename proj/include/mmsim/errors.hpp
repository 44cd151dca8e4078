#pragma once

#include <stdexcept>
#include <string>

namespace mmsim {

class ContainerError : public std::runtime_error {
public:
    enum class Kind { MalformedBox, NoVideoTrack, UnsupportedFeature };

    ContainerError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class PlanError : public std::runtime_error {
public:
    enum class Kind { EmptySelection, InvalidSelection, InvalidArgument };

    PlanError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class BufferError : public std::runtime_error {
public:
    enum class Kind {
        OutOfPages,
        GapError,
        CapacityError,
        UnwrittenRange,
        OutOfOrderRead,
        UseAfterFree,
        UnknownRequest,
        PartialSubmission,
    };

    BufferError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Configuration problems. `path()` is the JSON key path of the offending
/// entry, e.g. "scheduler.p_token_budget".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& what)
        : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)), message_(what) {}

    const std::string& path() const noexcept { return path_; }
    const std::string& message() const noexcept { return message_; }

private:
    std::string path_;
    std::string message_;
};

const char* to_string(ContainerError::Kind kind);
const char* to_string(BufferError::Kind kind);

}  // namespace mmsim
