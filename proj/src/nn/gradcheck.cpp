#include "qislab/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "qislab/common.hpp"

namespace qislab::nn {

bool GradCheckReport::pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

double GradCheckReport::max_rel_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
}

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrFloor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(std::span<const GradCheckTarget> targets, const std::function<double()>& loss,
                           double tolerance, double step) {
    GradCheckReport report;
    report.tolerance = tolerance;
    for (const auto& t : targets) {
        require(t.values.size() == t.analytic.size(), "grad_check: '" + t.name + "' gradient size mismatch");
        GradCheckEntry e;
        e.name = t.name;
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            const double saved = t.values[i];
            t.values[i] = saved + step;
            const double up = loss();
            t.values[i] = saved - step;
            const double down = loss();
            t.values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = relative_error(t.analytic[i], numeric);
            if (!(err <= e.max_rel_err)) {
                e.max_rel_err = std::isnan(err) ? INFINITY : err;
                e.worst_index = i;
            }
            ++e.checked;
        }
        e.pass = e.max_rel_err < tolerance;
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace qislab::nn
