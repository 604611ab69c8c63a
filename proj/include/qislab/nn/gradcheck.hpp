#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qislab::nn {

/// A parameter (or input) block to perturb, with the analytic gradient the
/// backward pass produced for it.
struct GradCheckTarget {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    bool pass = true;
};

struct GradCheckReport {
    double tolerance = 0.0;
    std::vector<GradCheckEntry> entries;

    bool pass() const;
    double max_rel_err() const;
};

inline constexpr double kGradCheckStep = 1e-5;

inline constexpr double kRelErrFloor = 1e-5;

/// |a − n| / max(|a|, |n|, kRelErrFloor). Without the floor an exactly-zero
/// gradient (a conv bias feeding train-mode batch norm) compares against pure
/// finite-difference roundoff.
double relative_error(double analytic, double numeric);

/// Central differences (f(x+h) − f(x−h)) / 2h for every entry of every target;
/// values are restored after each probe.
GradCheckReport grad_check(std::span<const GradCheckTarget> targets, const std::function<double()>& loss,
                           double tolerance, double step = kGradCheckStep);

}  // namespace qislab::nn
