#pragma once

#include <stdexcept>
#include <string>

namespace omoe {

struct InvalidInput : std::runtime_error {
    explicit InvalidInput(const std::string& msg) : std::runtime_error("invalid input: " + msg) {}
};

struct NumericalFailure : std::runtime_error {
    explicit NumericalFailure(const std::string& msg) : std::runtime_error("numerical failure: " + msg) {}
};

struct InvalidRank : std::runtime_error {
    explicit InvalidRank(const std::string& msg) : std::runtime_error("invalid rank: " + msg) {}
};

struct InvalidExpertIndex : std::runtime_error {
    explicit InvalidExpertIndex(const std::string& msg) : std::runtime_error("invalid expert index: " + msg) {}
};

struct InvalidTopK : std::runtime_error {
    explicit InvalidTopK(const std::string& msg) : std::runtime_error("invalid top-k: " + msg) {}
};

struct UnknownParameter : std::runtime_error {
    explicit UnknownParameter(const std::string& msg) : std::runtime_error("unknown parameter: " + msg) {}
};

struct HardSamplingViolation : std::runtime_error {
    explicit HardSamplingViolation(const std::string& msg) : std::runtime_error("hard-sampling violation: " + msg) {}
};

struct FreezeViolation : std::runtime_error {
    explicit FreezeViolation(const std::string& msg) : std::runtime_error("freeze violation: " + msg) {}
};

struct PretrainDiverged : std::runtime_error {
    explicit PretrainDiverged(const std::string& msg) : std::runtime_error("pretrain diverged: " + msg) {}
};

struct CorruptCheckpoint : std::runtime_error {
    explicit CorruptCheckpoint(const std::string& msg) : std::runtime_error("corrupt checkpoint: " + msg) {}
};

struct IncompleteCheckpoint : std::runtime_error {
    explicit IncompleteCheckpoint(const std::string& msg) : std::runtime_error("incomplete checkpoint: " + msg) {}
};

}  // namespace omoe
