#pragma once

#include <stdexcept>
#include <string>

namespace lpreduce {

/// An iterative or randomized procedure exhausted its budget. Carries the
/// best value reached (residual, imbalance, theta, ...) for diagnostics.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& msg, double best)
        : std::runtime_error(msg), best_(best) {}

    double best() const { return best_; }

private:
    double best_;
};

} // namespace lpreduce
