#pragma once
// Derivative-free simplex minimizer (Nelder & Mead 1965, standard
// reflection/expansion/contraction/shrink coefficients).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace nptax::detail {

struct SimplexResult {
    std::vector<double> x;
    double value = std::numeric_limits<double>::infinity();
    int evaluations = 0;
};

struct SimplexOptions {
    double initial_step = 0.5;
    double f_tolerance = 1e-13;
    double x_tolerance = 1e-10;
    int max_evaluations = 4000;
};

// Minimizes f from x0. Non-finite objective values are treated as +inf.
inline SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x0, const SimplexOptions& opt = {}) {
    const std::size_t dim = x0.size();
    SimplexResult res;
    auto eval = [&](const std::vector<double>& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<std::vector<double>> pts(dim + 1, x0);
    std::vector<double> vals(dim + 1);
    for (std::size_t i = 0; i < dim; ++i) pts[i + 1][i] += opt.initial_step;
    for (std::size_t i = 0; i <= dim; ++i) vals[i] = eval(pts[i]);

    std::vector<std::size_t> order(dim + 1);
    std::vector<double> centroid(dim), trial(dim), trial2(dim);
    while (res.evaluations < opt.max_evaluations) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[dim - 1];

        double spread = 0.0;
        for (std::size_t i = 0; i <= dim; ++i)
            for (std::size_t d = 0; d < dim; ++d) spread = std::max(spread, std::abs(pts[i][d] - pts[best][d]));
        const double fspread = vals[worst] - vals[best];
        if (std::isfinite(fspread) && fspread <= opt.f_tolerance * (1.0 + std::abs(vals[best])) &&
            spread <= opt.x_tolerance * (1.0 + std::abs(pts[best][0])))
            break;

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i <= dim; ++i) {
            if (i == worst) continue;
            for (std::size_t d = 0; d < dim; ++d) centroid[d] += pts[i][d] / static_cast<double>(dim);
        }
        auto along = [&](double t, std::vector<double>& out) {
            for (std::size_t d = 0; d < dim; ++d) out[d] = centroid[d] + t * (pts[worst][d] - centroid[d]);
        };

        along(-1.0, trial);
        const double fr = eval(trial);
        if (fr < vals[best]) {
            along(-2.0, trial2);
            const double fe = eval(trial2);
            if (fe < fr) {
                pts[worst] = trial2;
                vals[worst] = fe;
            } else {
                pts[worst] = trial;
                vals[worst] = fr;
            }
            continue;
        }
        if (fr < vals[second]) {
            pts[worst] = trial;
            vals[worst] = fr;
            continue;
        }
        const bool outside = fr < vals[worst];
        along(outside ? -0.5 : 0.5, trial2);
        const double fc = eval(trial2);
        if (fc < (outside ? fr : vals[worst])) {
            pts[worst] = trial2;
            vals[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i <= dim; ++i) {
            if (i == best) continue;
            for (std::size_t d = 0; d < dim; ++d) pts[i][d] = pts[best][d] + 0.5 * (pts[i][d] - pts[best][d]);
            vals[i] = eval(pts[i]);
        }
    }
    const auto it = std::min_element(vals.begin(), vals.end());
    res.value = *it;
    res.x = pts[static_cast<std::size_t>(it - vals.begin())];
    return res;
}

}  // namespace nptax::detail
