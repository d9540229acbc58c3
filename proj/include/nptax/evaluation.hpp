#pragma once
// Scoring predictions against true labels when some true taxa are absent
// from training.
//
// A rank whose true taxon was observed in training is correct when the
// predicted branch matches the true branch down to that rank. Once the true
// branch leaves the training tree (its first novel rank f), every rank from
// f on is correct only if the prediction turns novel exactly at f under the
// true deepest observed ancestor.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nptax/classifier.hpp"
#include "nptax/error.hpp"
#include "nptax/taxonomy.hpp"

namespace nptax {

enum class NoveltyOutcome : std::uint8_t {
    NotNovel,           // true branch fully observed in training
    FullyCorrectNovel,  // novel leaf predicted under the right ancestor at the right rank
    NovelWrongBranch,   // a novel leaf predicted, but not the right one
    PredictedObserved,  // an observed leaf predicted for a novel truth
};

inline std::string_view to_string(NoveltyOutcome o) {
    switch (o) {
        case NoveltyOutcome::NotNovel: return "not-novel";
        case NoveltyOutcome::FullyCorrectNovel: return "fully-correct-novel";
        case NoveltyOutcome::NovelWrongBranch: return "novel-wrong-branch";
        case NoveltyOutcome::PredictedObserved: return "predicted-observed";
    }
    return "?";
}

struct ScoredRank {
    bool correct = false;
    bool truth_novel = false;
    bool predicted_novel = false;
    double probability = 0.0;
};

struct ScoredPrediction {
    std::string query_id;
    std::vector<ScoredRank> ranks;  // levels 1..L
    int first_novel = 0;            // first rank absent from training, 0 if none
    NoveltyOutcome outcome = NoveltyOutcome::NotNovel;
    bool recognized_novel = false;  // prediction is novel at first_novel
    double max_probability = 0.0;   // probability of the lowest-rank call

    bool truth_novel() const noexcept { return first_novel > 0; }
    bool predicted_novel() const noexcept { return !ranks.empty() && ranks.back().predicted_novel; }
};

inline ScoredPrediction score_prediction(const Annotation& predicted, std::span<const std::string> truth,
                                         const TaxonomicTree& training) {
    const int depth = training.depth();
    if (truth.size() != static_cast<std::size_t>(depth))
        throw DataError("truth for '" + predicted.query_id + "' has " + std::to_string(truth.size()) +
                        " labels, expected " + std::to_string(depth));
    if (predicted.ranks.size() != static_cast<std::size_t>(depth))
        throw DataError("prediction for '" + predicted.query_id + "' does not cover every rank");
    for (const auto& t : truth)
        if (t.empty()) throw DataError("truth for '" + predicted.query_id + "' has an empty label");

    ScoredPrediction out;
    out.query_id = predicted.query_id;
    const int matched = training.deepest_match(truth).second;
    out.first_novel = matched == depth ? 0 : matched + 1;

    auto prefix_matches = [&](int upto) {  // predicted observed labels equal truth on levels 1..upto
        for (int l = 1; l <= upto; ++l) {
            const auto& call = predicted.ranks[static_cast<std::size_t>(l - 1)];
            if (call.novel || call.label != truth[static_cast<std::size_t>(l - 1)]) return false;
        }
        return true;
    };

    const bool novel_here_ok = out.first_novel > 0 && predicted.novel_from == out.first_novel &&
                               prefix_matches(out.first_novel - 1);
    for (int l = 1; l <= depth; ++l) {
        const auto& call = predicted.ranks[static_cast<std::size_t>(l - 1)];
        ScoredRank r;
        r.truth_novel = out.first_novel > 0 && l >= out.first_novel;
        r.predicted_novel = call.novel;
        r.probability = call.probability;
        r.correct = r.truth_novel ? novel_here_ok : prefix_matches(l);
        out.ranks.push_back(r);
    }
    out.max_probability = out.ranks.back().probability;
    if (out.first_novel > 0) {
        out.recognized_novel = predicted.ranks[static_cast<std::size_t>(out.first_novel - 1)].novel;
        if (out.ranks.back().correct)
            out.outcome = NoveltyOutcome::FullyCorrectNovel;
        else if (out.ranks.back().predicted_novel)
            out.outcome = NoveltyOutcome::NovelWrongBranch;
        else
            out.outcome = NoveltyOutcome::PredictedObserved;
    }
    return out;
}

enum class EvalGroup : std::uint8_t { All = 0, New = 1, Observed = 2 };

inline std::string_view to_string(EvalGroup g) {
    switch (g) {
        case EvalGroup::All: return "All";
        case EvalGroup::New: return "New";
        case EvalGroup::Observed: return "Observed";
    }
    return "?";
}

struct RankAccuracy {
    double accuracy = 0.0;          // percent correct
    double mean_probability = 0.0;  // mean probability of the call at this rank
};

struct GroupAccuracy {
    EvalGroup group = EvalGroup::All;
    std::size_t count = 0;
    std::vector<RankAccuracy> ranks;
};

struct AccuracyTable {
    std::vector<std::string> rank_names;
    GroupAccuracy all, novel, observed;  // "New" is any rank novel in truth

    const GroupAccuracy& group(EvalGroup g) const {
        return g == EvalGroup::All ? all : (g == EvalGroup::New ? novel : observed);
    }
};

inline AccuracyTable accuracy_table(std::span<const ScoredPrediction> scored, std::vector<std::string> rank_names) {
    if (scored.empty()) throw DataError("no scored predictions");
    const std::size_t depth = rank_names.size();
    AccuracyTable t;
    t.rank_names = std::move(rank_names);
    t.all.group = EvalGroup::All;
    t.novel.group = EvalGroup::New;
    t.observed.group = EvalGroup::Observed;
    for (GroupAccuracy* g : {&t.all, &t.novel, &t.observed}) g->ranks.assign(depth, {});

    auto add = [&](GroupAccuracy& g, const ScoredPrediction& s) {
        ++g.count;
        for (std::size_t l = 0; l < depth; ++l) {
            g.ranks[l].accuracy += s.ranks[l].correct ? 1.0 : 0.0;
            g.ranks[l].mean_probability += s.ranks[l].probability;
        }
    };
    for (const auto& s : scored) {
        if (s.ranks.size() != depth) throw DataError("scored prediction has the wrong number of ranks");
        add(t.all, s);
        add(s.truth_novel() ? t.novel : t.observed, s);
    }
    for (GroupAccuracy* g : {&t.all, &t.novel, &t.observed}) {
        if (g->count == 0) continue;
        for (auto& r : g->ranks) {
            r.accuracy = 100.0 * r.accuracy / static_cast<double>(g->count);
            r.mean_probability /= static_cast<double>(g->count);
        }
    }
    return t;
}

struct NoveltySummary {
    std::size_t predicted_novel = 0;  // predictions ending in a novel leaf
    std::size_t truly_novel = 0;      // truths with some rank absent from training
    std::size_t recognized = 0;       // truly novel and predicted novel at the first novel rank
    std::size_t fully_correct = 0;    // truly novel and correct at the lowest rank
    double recognized_percent = 0.0;
    double fully_correct_percent = 0.0;
    double mean_probability = 0.0;    // mean lowest-rank probability over truly novel queries
};

inline NoveltySummary novelty_summary(std::span<const ScoredPrediction> scored) {
    NoveltySummary s;
    for (const auto& p : scored) {
        if (p.predicted_novel()) ++s.predicted_novel;
        if (!p.truth_novel()) continue;
        ++s.truly_novel;
        s.mean_probability += p.max_probability;
        if (p.recognized_novel) ++s.recognized;
        if (p.outcome == NoveltyOutcome::FullyCorrectNovel) ++s.fully_correct;
    }
    if (s.truly_novel > 0) {
        const double n = static_cast<double>(s.truly_novel);
        s.recognized_percent = 100.0 * static_cast<double>(s.recognized) / n;
        s.fully_correct_percent = 100.0 * static_cast<double>(s.fully_correct) / n;
        s.mean_probability /= n;
    }
    return s;
}

}  // namespace nptax
