#pragma once
// Temperature selection on held-out data and calibration diagnostics.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nptax/classifier.hpp"
#include "nptax/error.hpp"
#include "nptax/evaluation.hpp"

namespace nptax {

inline const std::vector<double>& default_rho_grid() {
    static const std::vector<double> grid{0.02, 0.05, 0.08, 0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 1.0};
    return grid;
}

// Probability attached to a lowest-rank call and whether the call was right.
struct PredictionOutcome {
    double probability = 0.0;
    bool correct = false;
};

struct CurvePoint {
    double cumulative_probability = 0.0;  // percent
    double cumulative_accuracy = 0.0;     // percent
};

// Predictions sorted by decreasing probability; point i reports the mean
// probability and the accuracy of the top ceil(i * N / bins) predictions.
// Identical consecutive points are merged.
inline std::vector<CurvePoint> calibration_curve(std::span<const PredictionOutcome> predictions, std::size_t bins) {
    std::vector<CurvePoint> out;
    if (predictions.empty() || bins == 0) return out;
    std::vector<PredictionOutcome> sorted(predictions.begin(), predictions.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const PredictionOutcome& a, const PredictionOutcome& b) { return a.probability > b.probability; });
    const std::size_t n = sorted.size();
    double prob_sum = 0.0, hits = 0.0;
    std::size_t taken = 0;
    for (std::size_t i = 1; i <= bins; ++i) {
        const std::size_t upto = (i * n + bins - 1) / bins;
        if (upto == 0) continue;
        for (; taken < upto; ++taken) {
            prob_sum += sorted[taken].probability;
            hits += sorted[taken].correct ? 1.0 : 0.0;
        }
        const CurvePoint p{100.0 * prob_sum / static_cast<double>(taken), 100.0 * hits / static_cast<double>(taken)};
        if (!out.empty() && out.back().cumulative_probability == p.cumulative_probability &&
            out.back().cumulative_accuracy == p.cumulative_accuracy)
            continue;
        out.push_back(p);
    }
    return out;
}

// Equal-width binned expected calibration error on [0, 1].
inline double expected_calibration_error(std::span<const PredictionOutcome> predictions, std::size_t bins = 10) {
    if (predictions.empty()) return 0.0;
    std::vector<double> conf(bins, 0.0), acc(bins, 0.0), count(bins, 0.0);
    for (const auto& p : predictions) {
        auto b = static_cast<std::size_t>(p.probability * static_cast<double>(bins));
        b = std::min(b, bins - 1);
        conf[b] += p.probability;
        acc[b] += p.correct ? 1.0 : 0.0;
        count[b] += 1.0;
    }
    double ece = 0.0;
    for (std::size_t b = 0; b < bins; ++b)
        if (count[b] > 0.0) ece += std::abs(acc[b] - conf[b]);
    return ece / static_cast<double>(predictions.size());
}

enum class CalibrationObjective { Gap, ExpectedCalibrationError };

struct RhoEvaluation {
    double rho = 1.0;
    double accuracy = 0.0;          // fraction correct at the lowest rank
    double mean_probability = 0.0;  // mean probability of the lowest-rank call
    double gap = 0.0;               // |accuracy - mean_probability|
    double ece = 0.0;
};

struct CalibrationReport {
    std::vector<RhoEvaluation> grid;
    double chosen_rho = 1.0;
    std::size_t chosen = 0;
    CalibrationObjective objective = CalibrationObjective::Gap;
    std::vector<CurvePoint> curve;  // at the chosen rho

    double objective_value(std::size_t i) const {
        return objective == CalibrationObjective::Gap ? grid.at(i).gap : grid.at(i).ece;
    }
};

// Scores held-out queries from cached untempered log joints at one rho.
inline std::vector<ScoredPrediction> score_at_rho(const Model& model, std::span<const double> log_joints,
                                                  std::span<const std::vector<std::string>> truths, double rho) {
    const std::size_t nc = model.candidates().size();
    if (log_joints.size() != truths.size() * nc) throw DataError("cached posteriors do not match the truths");
    std::vector<ScoredPrediction> out;
    out.reserve(truths.size());
    for (std::size_t q = 0; q < truths.size(); ++q) {
        const auto a = model.annotate_log_joint(log_joints.subspan(q * nc, nc), rho, 0);
        out.push_back(score_prediction(a, truths[q], model.tree()));
    }
    return out;
}

inline std::vector<PredictionOutcome> lowest_rank_outcomes(std::span<const ScoredPrediction> scored) {
    std::vector<PredictionOutcome> out;
    out.reserve(scored.size());
    for (const auto& s : scored) out.push_back({s.max_probability, s.ranks.back().correct});
    return out;
}

struct CalibrationOptions {
    std::vector<double> grid = default_rho_grid();
    CalibrationObjective objective = CalibrationObjective::Gap;
    std::size_t curve_points = 20;
    std::size_t ece_bins = 10;
    unsigned threads = 1;
};

// Picks the grid temperature whose lowest-rank calibration objective is
// smallest; ties go to the larger rho. Queries are scored once and only
// re-tempered per grid point.
inline CalibrationReport select_rho(const Model& model, std::span<const QueryFeatures> holdout,
                                    std::span<const std::vector<std::string>> truths,
                                    const CalibrationOptions& opt = {}) {
    if (holdout.empty()) throw DataError("calibration needs a non-empty hold-out set");
    if (holdout.size() != truths.size()) throw DataError("hold-out queries and truths differ in number");
    if (opt.grid.empty()) throw DataError("empty temperature grid");
    for (double r : opt.grid) check_rho(r);

    const auto cached = log_joints(model, holdout, opt.threads);
    CalibrationReport rep;
    rep.objective = opt.objective;
    rep.grid.resize(opt.grid.size());
    parallel_chunks(opt.grid.size(), opt.threads, 1, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto scored = score_at_rho(model, cached, truths, opt.grid[i]);
            const auto outcomes = lowest_rank_outcomes(scored);
            RhoEvaluation ev;
            ev.rho = opt.grid[i];
            for (const auto& o : outcomes) {
                ev.accuracy += o.correct ? 1.0 : 0.0;
                ev.mean_probability += o.probability;
            }
            ev.accuracy /= static_cast<double>(outcomes.size());
            ev.mean_probability /= static_cast<double>(outcomes.size());
            ev.gap = std::abs(ev.accuracy - ev.mean_probability);
            ev.ece = expected_calibration_error(outcomes, opt.ece_bins);
            rep.grid[i] = ev;
        }
    });
    rep.chosen = 0;
    for (std::size_t i = 1; i < rep.grid.size(); ++i) {
        const double v = rep.objective_value(i), best = rep.objective_value(rep.chosen);
        if (v < best || (v == best && rep.grid[i].rho > rep.grid[rep.chosen].rho)) rep.chosen = i;
    }
    rep.chosen_rho = rep.grid[rep.chosen].rho;
    const auto scored = score_at_rho(model, cached, truths, rep.chosen_rho);
    rep.curve = calibration_curve(lowest_rank_outcomes(scored), opt.curve_points);
    return rep;
}

}  // namespace nptax
