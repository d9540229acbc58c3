#pragma once
// Prediction output. TSV columns: id, then <rank>, <rank>_prob, <rank>_novel
// per rank, then top1..topK as "label:probability". JSON lines carry the
// same fields. Probabilities use 6 significant digits.

#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "nptax/classifier.hpp"
#include "nptax/error.hpp"
#include "nptax/fasta.hpp"
#include "nptax/library_io.hpp"

namespace nptax {

enum class PredictionFormat { Tsv, JsonLines };

inline PredictionFormat parse_prediction_format(std::string_view s) {
    if (s == "tsv") return PredictionFormat::Tsv;
    if (s == "jsonl") return PredictionFormat::JsonLines;
    throw DataError("unknown prediction format '" + std::string(s) + "' (expected tsv or jsonl)");
}

inline std::string format_probability(double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", p);
    return buf;
}

inline void write_predictions_tsv(std::ostream& out, std::span<const Annotation> rows,
                                  std::span<const std::string> ranks, std::size_t top_k) {
    out << "id";
    for (const auto& r : ranks) out << '\t' << r << '\t' << r << "_prob\t" << r << "_novel";
    for (std::size_t k = 1; k <= top_k; ++k) out << "\ttop" << k;
    out << '\n';
    for (const auto& a : rows) {
        if (a.ranks.size() != ranks.size()) throw DataError("annotation depth differs from the rank list");
        out << a.query_id;
        for (const auto& c : a.ranks)
            out << '\t' << c.label << '\t' << format_probability(c.probability) << '\t' << (c.novel ? 1 : 0);
        for (std::size_t k = 0; k < top_k; ++k) {
            out << '\t';
            if (k < a.top_leaves.size())
                out << a.top_leaves[k].label << ':' << format_probability(a.top_leaves[k].probability);
        }
        out << '\n';
    }
}

inline void write_predictions_jsonl(std::ostream& out, std::span<const Annotation> rows,
                                    std::span<const std::string> ranks) {
    using nlohmann::ordered_json;
    for (const auto& a : rows) {
        if (a.ranks.size() != ranks.size()) throw DataError("annotation depth differs from the rank list");
        ordered_json j;
        j["id"] = a.query_id;
        ordered_json rs = ordered_json::array();
        for (std::size_t l = 0; l < ranks.size(); ++l)
            rs.push_back({{"rank", ranks[l]},
                          {"label", a.ranks[l].label},
                          {"probability", std::stod(format_probability(a.ranks[l].probability))},
                          {"novel", a.ranks[l].novel}});
        j["ranks"] = rs;
        ordered_json top = ordered_json::array();
        for (const auto& t : a.top_leaves)
            top.push_back({{"label", t.label}, {"probability", std::stod(format_probability(t.probability))}});
        j["top"] = top;
        out << j.dump() << '\n';
    }
}

inline void write_predictions(const std::string& path, std::span<const Annotation> rows,
                              std::span<const std::string> ranks, std::size_t top_k, PredictionFormat format) {
    auto out = open_output(path);
    if (format == PredictionFormat::Tsv)
        write_predictions_tsv(out, rows, ranks, top_k);
    else
        write_predictions_jsonl(out, rows, ranks);
    out.flush();
    if (!out) throw DataError("write to '" + path + "' failed");
}

struct PredictionTable {
    std::vector<std::string> ranks;
    std::vector<Annotation> rows;  // deepest_observed is not recoverable and left at the root
};

inline PredictionTable read_predictions_tsv(std::istream& in, const std::string& source = "<predictions>") {
    PredictionTable t;
    std::string line;
    std::size_t line_no = 0, top_k = 0;
    bool header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        const auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
        if (header) {
            if (cells.empty() || cells[0] != "id") throw DataError(where() + "missing prediction header");
            std::size_t i = 1;
            for (; i + 2 < cells.size() && cells[i + 1] == cells[i] + "_prob"; i += 3) {
                if (cells[i + 2] != cells[i] + "_novel") throw DataError(where() + "malformed rank columns");
                t.ranks.push_back(cells[i]);
            }
            top_k = cells.size() - i;
            if (t.ranks.empty()) throw DataError(where() + "no rank columns");
            header = false;
            continue;
        }
        if (cells.size() != 1 + 3 * t.ranks.size() + top_k) throw DataError(where() + "wrong number of columns");
        Annotation a;
        a.query_id = cells[0];
        try {
            for (std::size_t l = 0; l < t.ranks.size(); ++l) {
                RankCall c;
                c.level = static_cast<int>(l + 1);
                c.label = cells[1 + 3 * l];
                c.probability = std::stod(cells[2 + 3 * l]);
                c.novel = cells[3 + 3 * l] == "1";
                if (c.novel && a.novel_from == 0) a.novel_from = c.level;
                a.ranks.push_back(std::move(c));
            }
            for (std::size_t k = 0; k < top_k; ++k) {
                const auto& cell = cells[1 + 3 * t.ranks.size() + k];
                if (cell.empty()) continue;
                const auto colon = cell.rfind(':');
                if (colon == std::string::npos) throw DataError(where() + "malformed top-leaf cell");
                a.top_leaves.push_back({k, cell.substr(0, colon), std::stod(cell.substr(colon + 1))});
            }
        } catch (const std::logic_error&) {
            throw DataError(where() + "unparsable probability");
        }
        t.rows.push_back(std::move(a));
    }
    if (header) throw DataError(source + ": empty predictions file");
    return t;
}

inline PredictionTable read_predictions_tsv(const std::string& path) {
    auto in = open_input(path);
    return read_predictions_tsv(in, path);
}

}  // namespace nptax
