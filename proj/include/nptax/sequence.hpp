#pragma once
// Nucleotide encodings: per-locus codes for aligned sequences and kappa-mer
// count vectors for unaligned ones.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nptax/error.hpp"

namespace nptax {

// Nucleotide codes; everything that is not A/C/G/T is a gap.
namespace base {
enum : std::uint8_t { A = 0, C = 1, G = 2, T = 3, GAP = 4 };
}

namespace detail {
inline const std::array<std::uint8_t, 256>& nucleotide_table() {
    static const std::array<std::uint8_t, 256> table = [] {
        std::array<std::uint8_t, 256> t{};
        t.fill(base::GAP);
        t['A'] = t['a'] = base::A;
        t['C'] = t['c'] = base::C;
        t['G'] = t['g'] = base::G;
        t['T'] = t['t'] = base::T;
        return t;
    }();
    return table;
}
}  // namespace detail

inline std::uint8_t nucleotide_code(char c) noexcept {
    return detail::nucleotide_table()[static_cast<unsigned char>(c)];
}

inline char nucleotide_char(std::uint8_t code) noexcept {
    constexpr char chars[] = {'A', 'C', 'G', 'T', '-'};
    return code < 5 ? chars[code] : '-';
}

// Upper-cases A/C/G/T and replaces every other character with '-'.
inline std::string normalize_sequence(std::string_view raw) {
    std::string out(raw.size(), '-');
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = nucleotide_char(nucleotide_code(raw[i]));
    return out;
}

// One code per locus; anything other than A/C/G/T becomes GAP.
inline std::vector<std::uint8_t> encode_aligned(std::string_view raw, std::size_t expected_length) {
    if (raw.size() != expected_length)
        throw DataError("aligned sequence has length " + std::to_string(raw.size()) + ", expected " +
                        std::to_string(expected_length));
    std::vector<std::uint8_t> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = nucleotide_code(raw[i]);
    return out;
}

inline constexpr int kMaxKappa = 8;

// Sparse kappa-mer counts: (index, count) pairs sorted by index, where the
// index reads the kappa-mer as a base-4 number with A=0..T=3, first base most
// significant.
struct KmerVector {
    int kappa = 1;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> counts;
    std::uint64_t total = 0;

    std::size_t dimension() const noexcept { return std::size_t{1} << (2 * kappa); }
    std::uint32_t count(std::uint32_t index) const noexcept {
        for (const auto& [i, c] : counts)
            if (i == index) return c;
        return 0;
    }
};

inline void check_kappa(int kappa) {
    if (kappa < 1 || kappa > kMaxKappa)
        throw DataError("kappa must be in 1.." + std::to_string(kMaxKappa) + ", got " + std::to_string(kappa));
}

// Sliding window of width kappa, stride 1; windows touching a non-ACGT
// character are skipped.
inline KmerVector kmer_counts(std::string_view raw, int kappa) {
    check_kappa(kappa);
    KmerVector out;
    out.kappa = kappa;
    const std::uint32_t mask = static_cast<std::uint32_t>((std::uint64_t{1} << (2 * kappa)) - 1);
    std::vector<std::uint32_t> hits;
    if (raw.size() >= static_cast<std::size_t>(kappa)) hits.reserve(raw.size() - static_cast<std::size_t>(kappa) + 1);
    std::uint32_t code = 0;
    int valid = 0;  // consecutive ACGT characters ending here
    for (char ch : raw) {
        const auto n = nucleotide_code(ch);
        if (n == base::GAP) {
            valid = 0;
            code = 0;
            continue;
        }
        code = ((code << 2) | n) & mask;
        if (++valid >= kappa) hits.push_back(code);
    }
    std::sort(hits.begin(), hits.end());
    for (std::size_t i = 0; i < hits.size();) {
        std::size_t j = i;
        while (j < hits.size() && hits[j] == hits[i]) ++j;
        out.counts.emplace_back(hits[i], static_cast<std::uint32_t>(j - i));
        i = j;
    }
    out.total = hits.size();
    return out;
}

inline std::string kmer_string(std::uint32_t index, int kappa) {
    std::string s(static_cast<std::size_t>(kappa), 'A');
    for (int i = kappa - 1; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = nucleotide_char(static_cast<std::uint8_t>(index & 3u));
        index >>= 2;
    }
    return s;
}

}  // namespace nptax
