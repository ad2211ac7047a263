#pragma once

#include <stdexcept>
#include <string>

namespace stq {

struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(int epoch, double tau)
        : std::runtime_error("training diverged (non-finite loss) at epoch " +
                             std::to_string(epoch) + " for tau=" + std::to_string(tau)) {}
};

struct MissingQuantile : std::runtime_error {
    explicit MissingQuantile(double tau)
        : std::runtime_error("no trained network for tau=" + std::to_string(tau)) {}
};

}  // namespace stq
