#include "lpcr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lpcr {

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
}

GradCheckReport grad_check(const GraphBuilder& build, std::vector<Tensor*> params,
                           double tolerance, double step, double floor) {
    auto eval = [&]() {
        Tape tape;
        Var loss = build(tape, params);
        if (numel(tape.shape(loss)) != 1)
            throw std::invalid_argument("grad_check: graph loss must be scalar");
        return std::pair<Tape, Var>(std::move(tape), loss);
    };

    // analytic pass
    for (Tensor* p : params) {
        p->requires_grad = true;
        p->zero_grad();
    }
    {
        auto [tape, loss] = eval();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (Tensor* p : params) analytic.push_back(p->grad);

    auto loss_value = [&]() {
        auto [tape, loss] = eval();
        return tape.value(loss)[0];
    };

    GradCheckReport report;
    report.tolerance = tolerance;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        GradCheckEntry entry;
        entry.name = "param" + std::to_string(pi);
        for (size_t i = 0; i < p.values.size(); ++i) {
            const double keep = p.values[i];
            p.values[i] = keep + step;
            const double up = loss_value();
            p.values[i] = keep - step;
            const double down = loss_value();
            p.values[i] = keep;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), floor});
            if (rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = static_cast<int>(i);
            }
        }
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.worst() <= tolerance;
    return report;
}

}  // namespace lpcr
