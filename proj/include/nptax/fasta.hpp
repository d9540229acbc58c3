#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "nptax/error.hpp"

namespace nptax {

struct FastaRecord {
    std::string id;      // first whitespace-delimited header token
    std::string header;  // full header line without '>'
    std::string sequence;
};

// Streaming reader for multi-line FASTA; holds one record at a time.
class FastaReader {
  public:
    explicit FastaReader(std::istream& in, std::string source = "<stream>") : in_(in), source_(std::move(source)) {}

    std::optional<FastaRecord> next() {
        std::string line;
        if (pending_.empty()) {
            while (std::getline(in_, line)) {
                ++line_no_;
                strip_cr(line);
                if (line.empty()) continue;
                if (line[0] != '>')
                    throw DataError(source_ + ":" + std::to_string(line_no_) + ": sequence data before any header");
                pending_ = std::move(line);
                break;
            }
            if (pending_.empty()) return std::nullopt;
        }
        FastaRecord rec;
        rec.header = pending_.substr(1);
        pending_.clear();
        const auto stop = rec.header.find_first_of(" \t");
        rec.id = rec.header.substr(0, stop);
        if (rec.id.empty()) throw DataError(source_ + ":" + std::to_string(line_no_) + ": empty FASTA id");
        while (std::getline(in_, line)) {
            ++line_no_;
            strip_cr(line);
            if (!line.empty() && line[0] == '>') {
                pending_ = std::move(line);
                break;
            }
            for (char c : line)
                if (c != ' ' && c != '\t') rec.sequence += c;
        }
        return rec;
    }

  private:
    static void strip_cr(std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    }

    std::istream& in_;
    std::string source_;
    std::string pending_;
    std::size_t line_no_ = 0;
};

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "' for reading");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    return out;
}

inline std::vector<FastaRecord> read_fasta(const std::string& path) {
    auto in = open_input(path);
    FastaReader reader(in, path);
    std::vector<FastaRecord> out;
    while (auto rec = reader.next()) out.push_back(std::move(*rec));
    return out;
}

inline void write_fasta_record(std::ostream& out, std::string_view header, std::string_view sequence,
                               std::size_t width = 80) {
    out << '>' << header << '\n';
    if (width == 0) width = sequence.size() ? sequence.size() : 1;
    for (std::size_t i = 0; i < sequence.size(); i += width) out << sequence.substr(i, width) << '\n';
}

// Splits an embedded taxonomy header ">id;tax=a,b,c" into id and labels.
// Returns nullopt when the header has no ";tax=" field.
inline std::optional<std::pair<std::string, std::vector<std::string>>> parse_embedded_taxonomy(
    std::string_view header) {
    const auto first = header.find_first_of(" \t");
    const std::string_view token = header.substr(0, first);
    const auto at = token.find(";tax=");
    if (at == std::string_view::npos) return std::nullopt;
    std::pair<std::string, std::vector<std::string>> out;
    out.first = std::string(token.substr(0, at));
    std::string_view rest = token.substr(at + 5);
    if (const auto semi = rest.find(';'); semi != std::string_view::npos) rest = rest.substr(0, semi);
    for (;;) {
        const auto comma = rest.find(',');
        out.second.emplace_back(rest.substr(0, comma));
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
    }
    return out;
}

}  // namespace nptax
