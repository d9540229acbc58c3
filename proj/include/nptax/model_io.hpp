#pragma once
// Model file: "NPTAXMDL", u32 version, u64 header length, JSON header, then
// length-prefixed little-endian arrays (leaf counts u32, internal-node xi f64,
// clamp flags u8) and a trailing FNV-1a 64 checksum of all preceding bytes.
// Lookup tables are rebuilt on load from the stored values, so a loaded
// model scores exactly like the saved one.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "nptax/classifier.hpp"
#include "nptax/error.hpp"
#include "nptax/fasta.hpp"

namespace nptax {

inline constexpr char kModelMagic[8] = {'N', 'P', 'T', 'A', 'X', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

// Header contents readable without touching the arrays.
struct ModelMetadata {
    std::uint32_t version = kModelVersion;
    std::vector<std::string> ranks;
    KernelSpec kernel;
    std::vector<LevelParams> level_params;
    double rho = 1.0;
    std::size_t nodes = 0, leaves = 0, candidates = 0;
    std::uint64_t sequences = 0;
};

namespace detail {

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

class ByteWriter {
  public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    const std::vector<std::uint8_t>& data() const noexcept { return buf_; }

  private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
  public:
    ByteReader(const std::uint8_t* data, std::size_t n) : p_(data), end_(data + n) {}

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end_ - p_) < n) throw ModelFormatError("model file is truncated");
    }
    const std::uint8_t* take(std::size_t n) {
        need(n);
        const auto* at = p_;
        p_ += n;
        return at;
    }
    std::uint8_t u8() { return *take(1); }
    std::uint32_t u32() {
        const auto* b = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const auto* b = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    // Array length prefix, checked against the bytes that remain.
    std::size_t length(std::size_t element_size, std::size_t expected) {
        const std::uint64_t n = u64();
        if (n != expected) throw ModelFormatError("model array length field is inconsistent");
        need(static_cast<std::size_t>(n) * element_size);
        return static_cast<std::size_t>(n);
    }
    std::size_t remaining() const noexcept { return static_cast<std::size_t>(end_ - p_); }

  private:
    const std::uint8_t* p_;
    const std::uint8_t* end_;
};

inline nlohmann::json header_json(const Model& m) {
    using nlohmann::json;
    const auto& spec = m.sequence_model().spec();
    json h;
    h["format"] = "nptax-model";
    h["ranks"] = m.tree().ranks();
    h["kernel"] = {{"kind", std::string(to_string(spec.kind))}, {"length", spec.length}, {"kappa", spec.kappa}};
    json levels = json::array();
    for (const auto& p : m.level_params()) levels.push_back({{"alpha", p.alpha}, {"sigma", p.sigma}});
    h["level_params"] = levels;
    h["rho"] = m.rho();
    h["candidates"] = m.candidates().size();
    h["sequences"] = m.tree().total();
    json level = json::array(), parent = json::array(), label = json::array(), count = json::array();
    for (const auto& n : m.tree().nodes()) {
        level.push_back(n.level);
        parent.push_back(n.parent == kNoNode ? -1 : static_cast<std::int64_t>(n.parent));
        label.push_back(n.label);
        count.push_back(n.seq_count);
    }
    h["tree"] = {{"level", level}, {"parent", parent}, {"label", label}, {"count", count}};
    h["leaves"] = m.tree().leaves().size();
    return h;
}

inline ModelMetadata parse_metadata(const nlohmann::json& h, std::uint32_t version) {
    try {
        if (h.at("format").get<std::string>() != "nptax-model") throw ModelFormatError("unknown model format tag");
        ModelMetadata md;
        md.version = version;
        md.ranks = h.at("ranks").get<std::vector<std::string>>();
        const auto& k = h.at("kernel");
        md.kernel.kind = parse_kernel(k.at("kind").get<std::string>());
        md.kernel.length = k.at("length").get<std::size_t>();
        md.kernel.kappa = k.at("kappa").get<int>();
        for (const auto& p : h.at("level_params"))
            md.level_params.push_back({p.at("alpha").get<double>(), p.at("sigma").get<double>()});
        md.rho = h.at("rho").get<double>();
        md.nodes = h.at("tree").at("level").size();
        md.leaves = h.at("leaves").get<std::size_t>();
        md.candidates = h.at("candidates").get<std::size_t>();
        md.sequences = h.at("sequences").get<std::uint64_t>();
        return md;
    } catch (const ModelFormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw ModelFormatError(std::string("malformed model header: ") + e.what());
    }
}

inline std::vector<std::uint8_t> read_all(const std::string& path) {
    auto in = open_input(path);
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

// Parses magic, version and header; leaves the reader at the first array.
inline nlohmann::json read_header(ByteReader& r, std::uint32_t& version) {
    const auto* magic = r.take(sizeof kModelMagic);
    if (std::memcmp(magic, kModelMagic, sizeof kModelMagic) != 0) throw ModelFormatError("not an nptax model file");
    version = r.u32();
    if (version != kModelVersion)
        throw ModelFormatError("model format version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kModelVersion) + ")");
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw ModelFormatError("model header length exceeds the file size");
    const auto* text = r.take(static_cast<std::size_t>(len));
    auto h = nlohmann::json::parse(text, text + len, nullptr, false);
    if (h.is_discarded()) throw ModelFormatError("model header is not valid JSON");
    return h;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Model& m) {
    detail::ByteWriter w;
    w.bytes(kModelMagic, sizeof kModelMagic);
    w.u32(kModelVersion);
    const std::string header = detail::header_json(m).dump();
    w.u64(header.size());
    w.bytes(header.data(), header.size());

    const auto& seq = m.sequence_model();
    const auto& counts = seq.counts().raw();
    w.u64(counts.size());
    for (auto c : counts) w.u32(c);

    const auto& tree = m.tree();
    std::size_t xi_total = 0, flag_total = 0;
    for (NodeId id = 0; id < tree.size(); ++id) {
        if (tree.is_leaf(id)) continue;
        xi_total += seq.hyper()[id].xi.size();
        flag_total += seq.hyper()[id].clamped.size();
    }
    w.u64(xi_total);
    for (NodeId id = 0; id < tree.size(); ++id)
        if (!tree.is_leaf(id))
            for (double x : seq.hyper()[id].xi) w.f64(x);
    w.u64(flag_total);
    for (NodeId id = 0; id < tree.size(); ++id)
        if (!tree.is_leaf(id))
            for (auto f : seq.hyper()[id].clamped) w.u8(f);

    auto out = w.data();
    const std::uint64_t sum = detail::fnv1a(out.data(), out.size());
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(sum >> (8 * i)));
    return out;
}

inline Model deserialize_model(const std::vector<std::uint8_t>& data) {
    if (data.size() < 8) throw ModelFormatError("model file is truncated");
    const std::size_t body = data.size() - 8;
    detail::ByteReader tail(data.data() + body, 8);
    if (tail.u64() != detail::fnv1a(data.data(), body)) {
        // distinguish truncation from corruption where possible
        detail::ByteReader probe(data.data(), data.size());
        std::uint32_t v = 0;
        detail::read_header(probe, v);
        throw ModelFormatError("model file checksum mismatch (truncated or corrupted)");
    }
    detail::ByteReader r(data.data(), body);
    std::uint32_t version = 0;
    const auto h = detail::read_header(r, version);
    const auto md = detail::parse_metadata(h, version);

    try {
        md.kernel.check();
        for (const auto& p : md.level_params) p.check();
        check_rho(md.rho);
        if (md.level_params.size() != md.ranks.size())
            throw ModelFormatError("model stores the wrong number of level parameters");

        const auto& t = h.at("tree");
        const auto& lv = t.at("level");
        const auto& pa = t.at("parent");
        const auto& la = t.at("label");
        const auto& co = t.at("count");
        if (pa.size() != md.nodes || la.size() != md.nodes || co.size() != md.nodes)
            throw ModelFormatError("tree arrays differ in length");
        std::vector<TaxonNode> nodes(md.nodes);
        for (std::size_t i = 0; i < md.nodes; ++i) {
            nodes[i].level = lv[i].get<int>();
            const auto p = pa[i].get<std::int64_t>();
            nodes[i].parent = p < 0 ? kNoNode : static_cast<NodeId>(p);
            nodes[i].label = la[i].get<std::string>();
            nodes[i].seq_count = co[i].get<std::uint64_t>();
        }
        auto tree = TaxonomicTree::from_nodes(md.ranks, std::move(nodes));
        if (tree.leaves().size() != md.leaves) throw ModelFormatError("leaf count does not match the tree");

        LeafCounts counts(tree.leaves().size(), md.kernel);
        auto& raw = counts.raw();
        r.length(4, raw.size());
        for (auto& c : raw) c = r.u32();

        std::vector<DirichletHyper> hyper(tree.size());
        const std::size_t cells = md.kernel.cells(), loci = md.kernel.loci();
        std::size_t internal = 0;
        for (NodeId id = 0; id < tree.size(); ++id) internal += tree.is_leaf(id) ? 0 : 1;
        r.length(8, internal * cells);
        for (NodeId id = 0; id < tree.size(); ++id) {
            if (tree.is_leaf(id)) continue;
            hyper[id].xi.resize(cells);
            for (auto& x : hyper[id].xi) x = r.f64();
        }
        r.length(1, internal * loci);
        for (NodeId id = 0; id < tree.size(); ++id) {
            if (tree.is_leaf(id)) continue;
            hyper[id].clamped.resize(loci);
            for (auto& f : hyper[id].clamped) f = r.u8();
        }
        if (r.remaining() != 0) throw ModelFormatError("unexpected trailing bytes in model file");

        const auto candidates = enumerate_candidates(tree);
        if (candidates.size() != md.candidates) throw ModelFormatError("candidate count does not match the tree");
        SequenceModel seq(tree, md.kernel, std::move(counts), std::move(hyper), candidates);
        return Model(std::move(tree), md.level_params, std::move(seq), md.rho);
    } catch (const ModelFormatError&) {
        throw;
    } catch (const Error& e) {
        throw ModelFormatError(std::string("invalid model: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw ModelFormatError(std::string("malformed model header: ") + e.what());
    }
}

inline void save_model(const Model& m, const std::string& path) {
    const auto bytes = serialize_model(m);
    auto out = open_output(path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("write to '" + path + "' failed");
}

inline Model load_model(const std::string& path) { return deserialize_model(detail::read_all(path)); }

// Reads only the header.
inline ModelMetadata inspect_model(const std::string& path) {
    auto in = open_input(path);
    std::vector<std::uint8_t> head(sizeof kModelMagic + 12);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    if (in.gcount() != static_cast<std::streamsize>(head.size())) throw ModelFormatError("model file is truncated");
    detail::ByteReader r(head.data(), head.size());
    if (std::memcmp(r.take(sizeof kModelMagic), kModelMagic, sizeof kModelMagic) != 0)
        throw ModelFormatError("not an nptax model file");
    const std::uint32_t version = r.u32();
    if (version != kModelVersion)
        throw ModelFormatError("model format version " + std::to_string(version) + " is not supported");
    const std::uint64_t len = r.u64();
    if (len > (std::uint64_t{1} << 40)) throw ModelFormatError("model header length is implausible");
    std::string text(static_cast<std::size_t>(len), '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (in.gcount() != static_cast<std::streamsize>(len)) throw ModelFormatError("model file is truncated");
    auto h = nlohmann::json::parse(text, nullptr, false);
    if (h.is_discarded()) throw ModelFormatError("model header is not valid JSON");
    return detail::parse_metadata(h, version);
}

}  // namespace nptax
