#pragma once

#include <span>
#include <string>
#include <vector>

#include "nptax/taxonomy.hpp"

namespace nptax {

// One reference sequence with its rank labels (dummy-filled).
struct LibraryRecord {
    std::string id;
    std::vector<std::string> labels;
    std::string sequence;
};

struct Library {
    std::vector<std::string> ranks;
    std::vector<LibraryRecord> records;

    std::vector<TaxonRecord> taxon_records() const {
        std::vector<TaxonRecord> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back({r.id, r.labels});
        return out;
    }
    std::vector<std::string> sequences() const {
        std::vector<std::string> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.sequence);
        return out;
    }
    Library subset(std::span<const std::size_t> indices) const {
        Library out{ranks, {}};
        out.records.reserve(indices.size());
        for (auto i : indices) out.records.push_back(records.at(i));
        return out;
    }
};

}  // namespace nptax
