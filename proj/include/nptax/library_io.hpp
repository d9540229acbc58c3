#pragma once
// Reference library ingestion: FASTA sequences joined on id with a
// tab-separated taxonomy table whose header row names the ranks.

#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nptax/error.hpp"
#include "nptax/fasta.hpp"
#include "nptax/library.hpp"
#include "nptax/sequence.hpp"
#include "nptax/taxonomy.hpp"

namespace nptax {

struct TaxonomyTable {
    std::vector<std::string> ranks;
    std::vector<std::string> ids;                  // file order
    std::vector<std::vector<std::string>> labels;  // dummy-filled
};

inline std::vector<std::string> split_tabs(std::string_view line) {
    std::vector<std::string> out;
    for (;;) {
        const auto tab = line.find('\t');
        out.emplace_back(line.substr(0, tab));
        if (tab == std::string_view::npos) break;
        line = line.substr(tab + 1);
    }
    return out;
}

inline TaxonomyTable read_taxonomy(std::istream& in, const std::string& source = "<taxonomy>") {
    TaxonomyTable t;
    std::string line;
    std::size_t line_no = 0;
    std::unordered_set<std::string> seen;
    bool header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_tabs(line);
        const auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
        if (header) {
            if (cells.size() < 3) throw DataError(where() + "header needs an id column and at least two ranks");
            t.ranks.assign(cells.begin() + 1, cells.end());
            for (const auto& r : t.ranks)
                if (r.empty()) throw DataError(where() + "empty rank name in header");
            header = false;
            continue;
        }
        if (cells.size() > t.ranks.size() + 1)
            throw DataError(where() + "row has more columns than the header");
        if (cells[0].empty()) throw DataError(where() + "empty id");
        if (!seen.insert(cells[0]).second) throw DataError(where() + "duplicate id '" + cells[0] + "'");
        std::vector<std::string> labels(cells.begin() + 1, cells.end());
        labels.resize(t.ranks.size());  // dropped trailing cells count as blank
        t.ids.push_back(std::move(cells[0]));
        t.labels.push_back(fill_missing_ranks(std::move(labels)));
    }
    if (header) throw DataError(source + ": empty taxonomy file");
    return t;
}

inline TaxonomyTable read_taxonomy(const std::string& path) {
    auto in = open_input(path);
    return read_taxonomy(in, path);
}

struct LoadOptions {
    bool strict = false;                       // unmatched ids are fatal
    std::vector<std::string> expected_ranks;   // empty: accept the file's ranks
};

struct LoadReport {
    Library library;
    std::vector<std::string> missing_taxonomy;  // in FASTA, absent from the table
    std::vector<std::string> missing_sequence;  // in the table, absent from FASTA
};

inline void check_ranks(const std::vector<std::string>& found, const LoadOptions& opt) {
    if (!opt.expected_ranks.empty() && found != opt.expected_ranks) {
        std::string a, b;
        for (const auto& r : found) a += (a.empty() ? "" : ",") + r;
        for (const auto& r : opt.expected_ranks) b += (b.empty() ? "" : ",") + r;
        throw DataError("taxonomy ranks (" + a + ") differ from the configured ranks (" + b + ")");
    }
}

inline void finish_report(const LoadReport& rep, const LoadOptions& opt) {
    if (!opt.strict || (rep.missing_taxonomy.empty() && rep.missing_sequence.empty())) return;
    std::string msg = std::to_string(rep.missing_taxonomy.size()) + " sequence ids lack taxonomy and " +
                      std::to_string(rep.missing_sequence.size()) + " taxonomy ids lack sequences";
    const auto& first = rep.missing_taxonomy.empty() ? rep.missing_sequence : rep.missing_taxonomy;
    msg += " (first: '" + first.front() + "')";
    throw DataError(msg);
}

// Records come out in FASTA order; sequences are normalized.
inline LoadReport load_library(const std::string& fasta_path, const std::string& taxonomy_path,
                               const LoadOptions& opt = {}) {
    const auto table = read_taxonomy(taxonomy_path);
    check_ranks(table.ranks, opt);
    std::unordered_map<std::string, std::size_t> row;
    for (std::size_t i = 0; i < table.ids.size(); ++i) row.emplace(table.ids[i], i);

    LoadReport rep;
    rep.library.ranks = table.ranks;
    std::vector<char> used(table.ids.size(), 0);
    std::unordered_set<std::string> seen;
    auto in = open_input(fasta_path);
    FastaReader reader(in, fasta_path);
    while (auto rec = reader.next()) {
        if (!seen.insert(rec->id).second) throw DataError(fasta_path + ": duplicate sequence id '" + rec->id + "'");
        auto it = row.find(rec->id);
        if (it == row.end()) {
            rep.missing_taxonomy.push_back(rec->id);
            continue;
        }
        used[it->second] = 1;
        rep.library.records.push_back({rec->id, table.labels[it->second], normalize_sequence(rec->sequence)});
    }
    for (std::size_t i = 0; i < table.ids.size(); ++i)
        if (!used[i]) rep.missing_sequence.push_back(table.ids[i]);
    finish_report(rep, opt);
    return rep;
}

// Taxonomy carried in FASTA headers as ">id;tax=a,b,c"; rank names supplied.
inline LoadReport load_library_embedded(const std::string& fasta_path, std::vector<std::string> ranks,
                                        const LoadOptions& opt = {}) {
    if (ranks.size() < 2) throw DataError("embedded taxonomy needs at least two rank names");
    LoadReport rep;
    rep.library.ranks = std::move(ranks);
    std::unordered_set<std::string> seen;
    auto in = open_input(fasta_path);
    FastaReader reader(in, fasta_path);
    while (auto rec = reader.next()) {
        auto parsed = parse_embedded_taxonomy(rec->header);
        if (!parsed) {
            rep.missing_taxonomy.push_back(rec->id);
            continue;
        }
        auto& [id, labels] = *parsed;
        if (labels.size() > rep.library.ranks.size())
            throw DataError(fasta_path + ": '" + id + "' has more labels than ranks");
        if (!seen.insert(id).second) throw DataError(fasta_path + ": duplicate sequence id '" + id + "'");
        labels.resize(rep.library.ranks.size());
        rep.library.records.push_back({id, fill_missing_ranks(std::move(labels)), normalize_sequence(rec->sequence)});
    }
    finish_report(rep, opt);
    return rep;
}

inline void write_taxonomy(std::ostream& out, const Library& lib) {
    out << "id";
    for (const auto& r : lib.ranks) out << '\t' << r;
    out << '\n';
    for (const auto& rec : lib.records) {
        out << rec.id;
        for (const auto& l : rec.labels) out << '\t' << l;
        out << '\n';
    }
}

inline void write_library(const Library& lib, const std::string& fasta_path, const std::string& taxonomy_path) {
    {
        auto out = open_output(fasta_path);
        for (const auto& rec : lib.records) write_fasta_record(out, rec.id, rec.sequence);
        if (!out) throw DataError("write to '" + fasta_path + "' failed");
    }
    auto out = open_output(taxonomy_path);
    write_taxonomy(out, lib);
    if (!out) throw DataError("write to '" + taxonomy_path + "' failed");
}

}  // namespace nptax
