// nptax: train, classify, evaluate and simulate from the command line.
//
// Exit codes: 0 success, 1 internal error, 2 usage error, 3 data error,
// 4 numeric failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nptax/calibration.hpp"
#include "nptax/classifier.hpp"
#include "nptax/evaluation.hpp"
#include "nptax/fasta.hpp"
#include "nptax/library_io.hpp"
#include "nptax/model_io.hpp"
#include "nptax/pipeline.hpp"
#include "nptax/predictions_io.hpp"
#include "nptax/synth.hpp"

namespace {

using nlohmann::ordered_json;
using namespace nptax;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Logger {
    bool json = false;

    void event(const std::string& name, ordered_json fields = ordered_json::object()) const {
        if (json) {
            ordered_json j;
            j["event"] = name;
            for (auto& [k, v] : fields.items()) j[k] = v;
            std::cerr << j.dump() << '\n';
            return;
        }
        std::cerr << "[nptax] " << name;
        for (auto& [k, v] : fields.items()) std::cerr << ' ' << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump());
        std::cerr << '\n';
    }
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(item);
    return out;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    std::string library, taxonomy, model, ranks;
    std::string kernel = "product1";
    int kappa = 5;
    bool kappa_set = false;
    double rho = 1.0;
    std::string calibrate = "none";
    double holdout = 0.1;
    std::string holdout_mode = "stratified";
    std::string objective = "gap";
    int stratify_rank = 0;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    bool strict = false;
    bool embedded = false;
};

Library load_training_library(const std::string& fasta, const std::string& taxonomy, const std::string& ranks,
                              bool embedded, bool strict, const Logger& log) {
    LoadOptions opt;
    opt.strict = strict;
    LoadReport rep;
    if (embedded) {
        if (ranks.empty()) throw UsageError("--embedded-taxonomy needs --ranks");
        rep = load_library_embedded(fasta, split_list(ranks), opt);
    } else {
        if (taxonomy.empty()) throw UsageError("--taxonomy is required unless --embedded-taxonomy is set");
        if (!ranks.empty()) opt.expected_ranks = split_list(ranks);
        rep = load_library(fasta, taxonomy, opt);
    }
    if (!rep.missing_taxonomy.empty() || !rep.missing_sequence.empty())
        log.event("unmatched_ids", {{"without_taxonomy", rep.missing_taxonomy.size()},
                                    {"without_sequence", rep.missing_sequence.size()}});
    if (rep.library.records.empty()) throw DataError("library has no usable records");
    return std::move(rep.library);
}

KernelSpec kernel_for(const TrainArgs& a, const Library& lib) {
    KernelSpec spec;
    spec.kind = parse_kernel(a.kernel);
    if (a.kappa_set && spec.kind != KernelKind::Kmer) throw UsageError("--kappa only applies to --kernel=kmer");
    spec.kappa = a.kappa;
    if (spec.aligned()) spec.length = lib.records.front().sequence.size();
    spec.check();
    return spec;
}

int run_train(const TrainArgs& a, const Logger& log) {
    if (a.calibrate != "none" && a.calibrate != "auto") throw UsageError("--calibrate must be none or auto");
    if (a.holdout_mode != "random" && a.holdout_mode != "stratified")
        throw UsageError("--holdout-mode must be random or stratified");
    const auto lib = load_training_library(a.library, a.taxonomy, a.ranks, a.embedded, a.strict, log);
    TrainOptions opt;
    opt.kernel = kernel_for(a, lib);
    opt.rho = a.rho;
    opt.calibrate = a.calibrate == "auto";
    opt.holdout = a.holdout;
    opt.holdout_mode = a.holdout_mode == "stratified" ? SplitMode::Stratified : SplitMode::Random;
    opt.stratify_rank = a.stratify_rank;
    opt.seed = a.seed;
    opt.calibration.threads = a.threads;
    if (a.objective == "ece") opt.calibration.objective = CalibrationObjective::ExpectedCalibrationError;
    log.event("train_start", {{"records", lib.records.size()},
                              {"ranks", lib.ranks},
                              {"kernel", std::string(to_string(opt.kernel.kind))},
                              {"kappa", opt.kernel.kappa},
                              {"length", opt.kernel.length},
                              {"rho", a.rho},
                              {"calibrate", a.calibrate},
                              {"objective", a.objective},
                              {"rho_grid", opt.calibration.grid},
                              {"holdout", a.holdout},
                              {"holdout_mode", a.holdout_mode},
                              {"seed", a.seed},
                              {"threads", a.threads}});
    const auto result = train_model(lib, opt);
    if (result.calibration) {
        for (const auto& g : result.calibration->grid)
            log.event("calibration_grid", {{"rho", g.rho},
                                           {"accuracy", g.accuracy},
                                           {"mean_probability", g.mean_probability},
                                           {"gap", g.gap},
                                           {"ece", g.ece}});
        log.event("calibration_chosen",
                  {{"rho", result.calibration->chosen_rho}, {"holdout_records", result.holdout.test.size()}});
    }
    const auto& model = result.model;
    save_model(model, a.model);
    ordered_json params = ordered_json::array();
    for (const auto& f : result.fits)
        params.push_back({{"alpha", f.params.alpha}, {"sigma", f.params.sigma}, {"degenerate", f.degenerate}});
    log.event("train_done", {{"model", a.model},
                             {"leaves", model.tree().leaves().size()},
                             {"candidates", model.candidates().size()},
                             {"level_params", params},
                             {"rho", model.rho()}});
    return 0;
}

// ---- classify ------------------------------------------------------------

struct ClassifyArgs {
    std::string model, queries, out, format = "tsv";
    double rho = 0.0;
    bool rho_set = false;
    unsigned threads = 1;
    std::size_t topk = 5;
    std::size_t chunk = 4096;
};

int run_classify(const ClassifyArgs& a, const Logger& log) {
    const auto model = load_model(a.model);
    const double rho = a.rho_set ? a.rho : model.rho();
    check_rho(rho);
    const auto format = parse_prediction_format(a.format);
    log.event("classify_start", {{"model", a.model},
                                 {"candidates", model.candidates().size()},
                                 {"rho", rho},
                                 {"threads", a.threads},
                                 {"topk", a.topk}});
    auto out = open_output(a.out);
    auto in = open_input(a.queries);
    FastaReader reader(in, a.queries);
    ClassifyOptions opt;
    opt.rho = rho;
    opt.top_k = a.topk;
    opt.threads = a.threads;
    const auto& ranks = model.tree().ranks();
    if (format == PredictionFormat::Tsv) write_predictions_tsv(out, {}, ranks, a.topk);
    std::size_t total = 0;
    std::vector<Query> batch;
    auto flush = [&] {
        if (batch.empty()) return;
        for (auto& q : batch) q.sequence = normalize_sequence(q.sequence);
        const auto ann = classify_batch(model, batch, opt);
        if (format == PredictionFormat::Tsv) {
            std::ostringstream body;
            write_predictions_tsv(body, ann, ranks, a.topk);
            const auto s = body.str();
            out << s.substr(s.find('\n') + 1);  // drop the repeated header
        } else {
            write_predictions_jsonl(out, ann, ranks);
        }
        total += batch.size();
        batch.clear();
    };
    while (auto rec = reader.next()) {
        batch.push_back({rec->id, std::move(rec->sequence)});
        if (batch.size() >= a.chunk) flush();
    }
    flush();
    out.flush();
    if (!out) throw DataError("write to '" + a.out + "' failed");
    log.event("classify_done", {{"queries", total}, {"out", a.out}});
    return 0;
}

// ---- evaluate ------------------------------------------------------------

struct EvaluateArgs {
    std::string model, predictions, truth, out, curve;
    std::size_t curve_points = 20;
};

int run_evaluate(const EvaluateArgs& a, const Logger& log) {
    const auto meta_model = load_model(a.model);
    const auto& tree = meta_model.tree();
    const auto preds = read_predictions_tsv(a.predictions);
    if (preds.ranks != tree.ranks()) throw DataError("prediction ranks differ from the model ranks");
    const auto truth = read_taxonomy(a.truth);
    if (truth.ranks != tree.ranks()) throw DataError("truth ranks differ from the model ranks");
    std::unordered_map<std::string, std::size_t> row;
    for (std::size_t i = 0; i < truth.ids.size(); ++i) row.emplace(truth.ids[i], i);

    std::vector<ScoredPrediction> scored;
    std::size_t missing = 0;
    for (const auto& p : preds.rows) {
        auto it = row.find(p.query_id);
        if (it == row.end()) {
            ++missing;
            continue;
        }
        scored.push_back(score_prediction(p, truth.labels[it->second], tree));
    }
    if (missing) log.event("unmatched_predictions", {{"count", missing}});
    const auto table = accuracy_table(scored, tree.ranks());
    const auto nov = novelty_summary(scored);

    std::ostringstream report;
    report << "group\tcount";
    for (const auto& r : table.rank_names) report << '\t' << r << "_acc\t" << r << "_prob";
    report << '\n';
    for (auto g : {EvalGroup::All, EvalGroup::New, EvalGroup::Observed}) {
        const auto& ga = table.group(g);
        report << to_string(g) << '\t' << ga.count;
        for (const auto& r : ga.ranks) report << '\t' << format_probability(r.accuracy) << '\t'
                                              << format_probability(r.mean_probability);
        report << '\n';
    }
    if (a.out.empty()) {
        std::cout << report.str();
    } else {
        auto out = open_output(a.out);
        out << report.str();
    }
    if (!a.curve.empty()) {
        const auto curve = calibration_curve(lowest_rank_outcomes(scored), a.curve_points);
        auto out = open_output(a.curve);
        out << "mean_probability_percent,accuracy_percent\n";
        for (const auto& p : curve)
            out << format_probability(p.cumulative_probability) << ',' << format_probability(p.cumulative_accuracy)
                << '\n';
    }
    log.event("evaluate_done", {{"scored", scored.size()},
                                {"truly_novel", nov.truly_novel},
                                {"predicted_novel", nov.predicted_novel},
                                {"recognized_percent", nov.recognized_percent},
                                {"fully_correct_percent", nov.fully_correct_percent}});
    return 0;
}

// ---- simulate ------------------------------------------------------------

struct SimulateArgs {
    std::string ranks = "family,genus,species";
    std::string alpha = "1", sigma = "0.25", concentration = "2";
    std::size_t length = 100, n = 1000;
    double gap_rate = 0.0;
    double holdout = 0.0;
    std::string holdout_mode = "random";
    int stratify_rank = 0;
    std::uint64_t seed = 1;
    std::string out;
};

std::vector<double> parse_doubles(const std::string& s, std::size_t n, const char* what) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw UsageError(std::string("cannot parse ") + what + " value '" + item + "'");
        }
    }
    if (out.size() == 1) out.resize(n, out.front());
    if (out.size() != n) throw UsageError(std::string(what) + " needs one value or one per rank");
    return out;
}

int run_simulate(const SimulateArgs& a, const Logger& log) {
    SynthConfig cfg;
    cfg.ranks = split_list(a.ranks);
    const auto alphas = parse_doubles(a.alpha, cfg.ranks.size(), "--alpha");
    const auto sigmas = parse_doubles(a.sigma, cfg.ranks.size(), "--sigma");
    cfg.concentration = parse_doubles(a.concentration, cfg.ranks.size(), "--concentration");
    for (std::size_t l = 0; l < cfg.ranks.size(); ++l) cfg.levels.push_back({alphas[l], sigmas[l]});
    cfg.length = a.length;
    cfg.n = a.n;
    cfg.gap_rate = a.gap_rate;
    cfg.seed = a.seed;
    const auto sim = simulate_library(cfg);
    log.event("simulate", {{"ranks", cfg.ranks}, {"n", cfg.n}, {"length", cfg.length}, {"seed", cfg.seed}});
    write_library(sim.library, a.out + ".fasta", a.out + ".tsv");
    if (a.holdout > 0.0) {
        if (a.holdout_mode != "random" && a.holdout_mode != "stratified")
            throw UsageError("--holdout-mode must be random or stratified");
        const auto mode = a.holdout_mode == "stratified" ? SplitMode::Stratified : SplitMode::Random;
        const int level = a.stratify_rank > 0 ? a.stratify_rank : static_cast<int>(cfg.ranks.size());
        const auto split = holdout_split(sim.library, mode, a.holdout, a.seed, level);
        write_library(sim.library.subset(split.train), a.out + ".train.fasta", a.out + ".train.tsv");
        write_library(sim.library.subset(split.test), a.out + ".test.fasta", a.out + ".test.tsv");
        log.event("split", {{"train", split.train.size()}, {"test", split.test.size()}});
    }
    return 0;
}

// ---- inspect -------------------------------------------------------------

int run_inspect(const std::string& path) {
    const auto md = inspect_model(path);
    ordered_json j;
    j["version"] = md.version;
    j["ranks"] = md.ranks;
    j["kernel"] = std::string(to_string(md.kernel.kind));
    j["length"] = md.kernel.length;
    j["kappa"] = md.kernel.kappa;
    ordered_json params = ordered_json::array();
    for (const auto& p : md.level_params) params.push_back({{"alpha", p.alpha}, {"sigma", p.sigma}});
    j["level_params"] = params;
    j["rho"] = md.rho;
    j["nodes"] = md.nodes;
    j["leaves"] = md.leaves;
    j["candidates"] = md.candidates;
    j["sequences"] = md.sequences;
    std::cout << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Taxonomic classification of DNA sequences with novelty detection"};
    app.require_subcommand(1);
    std::string log_format = "text";
    app.add_option("--log", log_format, "Run log format on stderr")
        ->check(CLI::IsMember({"text", "json"}))
        ->capture_default_str();

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Fit a model from a reference library");
    train->add_option("--library", ta.library, "Reference FASTA")->required();
    train->add_option("--taxonomy", ta.taxonomy, "Taxonomy TSV (id column, one column per rank)");
    train->add_flag("--embedded-taxonomy", ta.embedded, "Read labels from '>id;tax=a,b,c' headers");
    train->add_option("--ranks", ta.ranks, "Comma-separated rank names (checked against, or used with embedded labels)");
    train->add_option("--model", ta.model, "Output model file")->required();
    train->add_option("--kernel", ta.kernel, "Sequence kernel")
        ->check(CLI::IsMember({"product1", "product2", "kmer"}))
        ->capture_default_str();
    auto* kappa = train->add_option("--kappa", ta.kappa, "k-mer length (kmer kernel only)")
                      ->check(CLI::Range(1, kMaxKappa))
                      ->capture_default_str();
    train->add_option("--rho", ta.rho, "Temperature stored in the model when not calibrating")->capture_default_str();
    train->add_option("--calibrate", ta.calibrate,
                      "auto: choose rho on an internal hold-out from the grid 0.02,0.05,0.08,0.1,0.15,0.2,0.3,0.5,0.7,1")
        ->check(CLI::IsMember({"none", "auto"}))
        ->capture_default_str();
    train->add_option("--holdout", ta.holdout, "Hold-out fraction for calibration")->capture_default_str();
    train->add_option("--holdout-mode", ta.holdout_mode,
                      "random, or stratified by taxon (taxa with at least 2 records)")
        ->check(CLI::IsMember({"random", "stratified"}))
        ->capture_default_str();
    train->add_option("--stratify-rank", ta.stratify_rank, "Rank level (1..L) for stratified hold-out; default L");
    train->add_option("--objective", ta.objective, "Calibration objective: gap or ece")
        ->check(CLI::IsMember({"gap", "ece"}))
        ->capture_default_str();
    train->add_option("--seed", ta.seed, "Seed for the hold-out split")->capture_default_str();
    train->add_option("--threads", ta.threads, "Worker threads")->capture_default_str();
    train->add_flag("--strict", ta.strict, "Fail when FASTA and taxonomy ids do not match");

    ClassifyArgs ca;
    auto* classify = app.add_subcommand("classify", "Classify query sequences");
    classify->add_option("--model", ca.model, "Model file")->required();
    classify->add_option("--queries", ca.queries, "Query FASTA")->required();
    classify->add_option("--out", ca.out, "Predictions output")->required();
    auto* rho = classify->add_option("--rho", ca.rho, "Override the stored temperature");
    classify->add_option("--threads", ca.threads, "Worker threads (output does not depend on it)")
        ->capture_default_str();
    classify->add_option("--topk", ca.topk, "Top leaves reported per query")->capture_default_str();
    classify->add_option("--format", ca.format, "tsv or jsonl")
        ->check(CLI::IsMember({"tsv", "jsonl"}))
        ->capture_default_str();
    classify->add_option("--chunk", ca.chunk, "Queries read per batch")->capture_default_str();
    classify->add_option("--seed", "Accepted for uniformity; classification is deterministic");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against true labels");
    evaluate->add_option("--model", ea.model, "Model the predictions came from")->required();
    evaluate->add_option("--predictions", ea.predictions, "Predictions TSV")->required();
    evaluate->add_option("--truth", ea.truth, "Taxonomy TSV with the true labels")->required();
    evaluate->add_option("--out", ea.out, "Accuracy table TSV (default: stdout)");
    evaluate->add_option("--curve", ea.curve, "Calibration curve CSV");
    evaluate->add_option("--curve-points", ea.curve_points, "Points on the calibration curve")->capture_default_str();

    SimulateArgs sa;
    auto* simulate = app.add_subcommand("simulate", "Draw a synthetic reference library");
    simulate->add_option("--ranks", sa.ranks, "Comma-separated rank names")->capture_default_str();
    simulate->add_option("--alpha", sa.alpha, "Urn alpha, one value or one per rank")->capture_default_str();
    simulate->add_option("--sigma", sa.sigma, "Urn sigma, one value or one per rank")->capture_default_str();
    simulate->add_option("--concentration", sa.concentration, "Dirichlet mass per rank")->capture_default_str();
    simulate->add_option("--length", sa.length, "Aligned sequence length")->capture_default_str();
    simulate->add_option("-n,--records", sa.n, "Number of sequences")->capture_default_str();
    simulate->add_option("--gap-rate", sa.gap_rate, "Per-locus gap probability")->capture_default_str();
    simulate->add_option("--holdout", sa.holdout, "Also write a train/test split with this test fraction");
    simulate->add_option("--holdout-mode", sa.holdout_mode, "random or stratified")->capture_default_str();
    simulate->add_option("--stratify-rank", sa.stratify_rank, "Rank level for stratified split; default L");
    simulate->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
    simulate->add_option("--out", sa.out, "Output prefix (writes PREFIX.fasta and PREFIX.tsv)")->required();

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "Print model metadata without loading the arrays");
    inspect->add_option("--model", inspect_path, "Model file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    Logger log;
    log.json = log_format == "json";
    ta.kappa_set = kappa->count() > 0;
    ca.rho_set = rho->count() > 0;
    try {
        if (*train) return run_train(ta, log);
        if (*classify) return run_classify(ca, log);
        if (*evaluate) return run_evaluate(ea, log);
        if (*simulate) return run_simulate(sa, log);
        if (*inspect) return run_inspect(inspect_path);
    } catch (const UsageError& e) {
        log.event("error", {{"kind", "usage"}, {"message", e.what()}});
        return kExitUsage;
    } catch (const NumericError& e) {
        log.event("error", {{"kind", "numeric"}, {"message", e.what()}});
        return kExitNumeric;
    } catch (const DataError& e) {
        log.event("error", {{"kind", "data"}, {"message", e.what()}});
        return kExitData;
    } catch (const std::exception& e) {
        log.event("error", {{"kind", "internal"}, {"message", e.what()}});
        return 1;
    }
    return kExitUsage;
}
