#pragma once

// Binary checkpoint container shared by both model kinds:
//   magic "GCPC" | u32 LE format version | u64 LE header length |
//   JSON header {component, config, extra, tensors: [{name, shape, byte_offset}]} |
//   raw little-endian f64 payloads in table order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcpc/errors.hpp"
#include "gcpc/nn.hpp"
#include "gcpc/tensor.hpp"

namespace gcpc {

inline constexpr char kCheckpointMagic[4] = {'G', 'C', 'P', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string component;  // "TRAJNET" or "POLICY"
    nlohmann::json config;
    nlohmann::json extra;   // norm stats, optimizer scalars, ...
    NamedParams tensors;    // table order == payload order
};

namespace detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 8);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint: truncated fixed header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw FormatError("checkpoint: truncated fixed header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64_le(std::ostream& os, std::span<const double> vals) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(vals.data()),
                 static_cast<std::streamsize>(vals.size() * sizeof(double)));
    } else {
        for (double d : vals) write_u64_le(os, std::bit_cast<std::uint64_t>(d));
    }
}

inline void read_f64_le(std::istream& is, std::span<double> vals) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(vals.size() * sizeof(double)));
        if (!is) throw FormatError("checkpoint: truncated tensor payload");
    } else {
        for (double& d : vals) d = std::bit_cast<double>(read_u64_le(is));
    }
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["component"] = ck.component;
    header["config"] = ck.config;
    header["extra"] = ck.extra;
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    std::set<std::string> seen;
    for (const auto& [name, t] : ck.tensors) {
        if (!seen.insert(name).second)
            throw FormatError("checkpoint: duplicate tensor name '" + name + "'");
        nlohmann::json row;
        row["name"] = name;
        row["shape"] = t.shape();
        row["byte_offset"] = offset;
        table.push_back(row);
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
    }
    header["tensors"] = table;
    std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 4);
    detail::write_u32_le(os, kCheckpointVersion);
    detail::write_u64_le(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : ck.tensors) detail::write_f64_le(os, t.data());
    if (!os) throw DataError("checkpoint write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path.string());
    std::uint32_t version = detail::read_u32_le(is);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
    std::uint64_t hlen = detail::read_u64_le(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw FormatError("checkpoint: truncated JSON header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint: malformed JSON header: " + std::string(e.what()));
    }

    Checkpoint ck;
    try {
        ck.component = header.at("component").get<std::string>();
        ck.config = header.at("config");
        ck.extra = header.at("extra");
        std::uint64_t expect_offset = 0;
        for (const auto& row : header.at("tensors")) {
            std::string name = row.at("name").get<std::string>();
            Shape shape = row.at("shape").get<Shape>();
            std::uint64_t off = row.at("byte_offset").get<std::uint64_t>();
            if (off != expect_offset)
                throw FormatError("checkpoint: tensor table offset mismatch at '" + name + "'");
            Tensor t = Tensor::zeros(shape);
            detail::read_f64_le(is, t.data());
            ck.tensors.emplace_back(std::move(name), std::move(t));
            expect_offset += static_cast<std::uint64_t>(ck.tensors.back().second.numel()) * sizeof(double);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint: invalid header fields: " + std::string(e.what()));
    }
    // anything left over means the table and payload disagree
    is.peek();
    if (!is.eof()) throw FormatError("checkpoint: trailing bytes beyond tensor table");
    return ck;
}

/// Copies checkpoint tensors into an existing named-parameter set; every
/// name must be present with a matching shape, exactly once.
inline void load_into_params(const Checkpoint& ck, NamedParams& params) {
    if (ck.tensors.size() != params.size())
        throw FormatError("checkpoint: expected " + std::to_string(params.size()) +
                          " tensors, file has " + std::to_string(ck.tensors.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [fname, ft] = ck.tensors[i];
        auto& [pname, pt] = params[i];
        if (fname != pname)
            throw FormatError("checkpoint: tensor '" + fname + "' where '" + pname + "' expected");
        if (ft.shape() != pt.shape())
            throw FormatError("checkpoint: shape mismatch for '" + fname + "'");
        std::copy(ft.data().begin(), ft.data().end(), pt.data().begin());
    }
}

}  // namespace gcpc
