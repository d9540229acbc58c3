#pragma once
// Training entry point shared by the command-line tool and the end-to-end
// checks: fit on a library, optionally choosing the temperature on an
// internal hold-out first.

#include <optional>
#include <string>
#include <vector>

#include "nptax/calibration.hpp"
#include "nptax/classifier.hpp"
#include "nptax/library.hpp"
#include "nptax/synth.hpp"

namespace nptax {

struct TrainOptions {
    KernelSpec kernel;
    double rho = 1.0;        // stored when not calibrating
    bool calibrate = false;
    double holdout = 0.1;
    SplitMode holdout_mode = SplitMode::Stratified;
    int stratify_rank = 0;             // 0: lowest rank
    std::size_t min_taxon_size = 2;    // stratified draws skip smaller taxa
    std::uint64_t seed = 1;
    CalibrationOptions calibration;
};

struct TrainResult {
    Model model;
    std::vector<LevelFit> fits;
    std::optional<CalibrationReport> calibration;
    Split holdout;  // empty unless calibrating
};

inline Model fit_library(const Library& lib, const KernelSpec& kernel, double rho,
                         std::vector<LevelFit>* fits = nullptr) {
    const auto recs = lib.taxon_records();
    const auto seqs = lib.sequences();
    return Model::train(lib.ranks, recs, seqs, kernel, rho, fits);
}

inline TrainResult train_model(const Library& lib, const TrainOptions& opt) {
    TrainResult out;
    double rho = opt.rho;
    if (opt.calibrate) {
        const int level = opt.stratify_rank > 0 ? opt.stratify_rank : static_cast<int>(lib.ranks.size());
        out.holdout = holdout_split(lib, opt.holdout_mode, opt.holdout, opt.seed, level, opt.min_taxon_size);
        if (out.holdout.train.empty() || out.holdout.test.empty())
            throw DataError("calibration hold-out left one side empty");
        const auto train = lib.subset(out.holdout.train);
        const auto inner = fit_library(train, opt.kernel, 1.0);
        std::vector<QueryFeatures> feats;
        std::vector<std::vector<std::string>> truths;
        for (auto i : out.holdout.test) {
            feats.push_back(inner.encode(lib.records[i].sequence));
            truths.push_back(lib.records[i].labels);
        }
        out.calibration = select_rho(inner, feats, truths, opt.calibration);
        rho = out.calibration->chosen_rho;
    }
    out.model = fit_library(lib, opt.kernel, rho, &out.fits);
    return out;
}

}  // namespace nptax
