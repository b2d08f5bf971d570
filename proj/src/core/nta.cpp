// SPDX-License-Identifier: Apache-2.0

#include "posemoe/nta.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "json.hpp"

#include "posemoe/errors.hpp"

namespace posemoe {

namespace {

constexpr char kMagic[] = {'N', 'T', 'A', '1', '\n'};
constexpr std::size_t kMagicSize = sizeof(kMagic);

void put_le(std::vector<char>& out, std::uint64_t bits, std::size_t n_bytes) {
    for (std::size_t i = 0; i < n_bytes; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const char* p, std::size_t n_bytes) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n_bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

}  // namespace

std::string dtype_name(Dtype dtype) { return dtype == Dtype::F32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& name) {
    if (name == "f32") return Dtype::F32;
    if (name == "f64") return Dtype::F64;
    throw CheckpointError("NTA1: unknown dtype '" + name + "'");
}

std::vector<char> encode_nta(const std::vector<NtaEntry>& entries) {
    nlohmann::json header = nlohmann::json::array();
    std::vector<char> payload;
    for (const auto& e : entries) {
        if (shape_numel(e.shape) != e.values.size()) {
            throw CheckpointError("NTA1: entry '" + e.name + "' shape " + shape_str(e.shape) + " does not match " +
                                  std::to_string(e.values.size()) + " values");
        }
        header.push_back({{"name", e.name}, {"dtype", dtype_name(e.dtype)}, {"shape", e.shape},
                          {"byte_offset", payload.size()}});
        for (double v : e.values) {
            if (e.dtype == Dtype::F32) {
                put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
            } else {
                put_le(payload, std::bit_cast<std::uint64_t>(v), 8);
            }
        }
    }
    const std::string text = header.dump();
    std::vector<char> out(kMagic, kMagic + kMagicSize);
    put_le(out, text.size(), 8);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::vector<NtaEntry> decode_nta(const std::vector<char>& bytes) {
    if (bytes.size() < kMagicSize + 8 || std::memcmp(bytes.data(), kMagic, kMagicSize) != 0) {
        throw CheckpointError("NTA1: bad magic");
    }
    const std::uint64_t header_len = get_le(bytes.data() + kMagicSize, 8);
    const std::size_t payload_start = kMagicSize + 8 + header_len;
    if (payload_start > bytes.size()) throw CheckpointError("NTA1: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kMagicSize + 8, bytes.begin() + payload_start);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("NTA1: malformed header: ") + e.what());
    }
    if (!header.is_array()) throw CheckpointError("NTA1: header must be a JSON array");
    std::vector<NtaEntry> out;
    for (const auto& h : header) {
        NtaEntry e;
        try {
            e.name = h.at("name").get<std::string>();
            e.dtype = parse_dtype(h.at("dtype").get<std::string>());
            e.shape = h.at("shape").get<Shape>();
            const auto offset = h.at("byte_offset").get<std::size_t>();
            const std::size_t n = shape_numel(e.shape);
            const std::size_t width = dtype_size(e.dtype);
            if (payload_start + offset + n * width > bytes.size()) {
                throw CheckpointError("NTA1: entry '" + e.name + "' runs past end of file");
            }
            const char* p = bytes.data() + payload_start + offset;
            e.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (e.dtype == Dtype::F32) {
                    e.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p + 4 * i, 4)));
                } else {
                    e.values[i] = std::bit_cast<double>(get_le(p + 8 * i, 8));
                }
            }
        } catch (const nlohmann::json::exception& ex) {
            throw CheckpointError(std::string("NTA1: malformed header entry: ") + ex.what());
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_nta(const std::filesystem::path& path, const std::vector<NtaEntry>& entries) {
    const auto bytes = encode_nta(entries);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("NTA1: cannot open " + path.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw CheckpointError("NTA1: write failed for " + path.string());
}

std::vector<NtaEntry> read_nta(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("NTA1: cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_nta(bytes);
}

template <typename T>
std::vector<NtaEntry> to_nta_entries(const ParamList<T>& params) {
    std::vector<NtaEntry> out;
    for (const auto& p : params) {
        NtaEntry e;
        e.name = p.name;
        e.dtype = std::is_same_v<T, float> ? Dtype::F32 : Dtype::F64;
        e.shape = p.tensor.shape();
        e.values.assign(p.tensor.data().begin(), p.tensor.data().end());
        out.push_back(std::move(e));
    }
    return out;
}

template <typename T>
void assign_from_nta(const std::vector<NtaEntry>& entries, const ParamList<T>& params) {
    std::map<std::string, const NtaEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    for (const auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw CheckpointError("NTA1: missing tensor '" + p.name + "'");
        if (it->second->shape != p.tensor.shape()) {
            throw CheckpointError("NTA1: tensor '" + p.name + "' has shape " + shape_str(it->second->shape) +
                                  ", expected " + shape_str(p.tensor.shape()));
        }
        auto dst = Tensor<T>(p.tensor).mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    }
}

template std::vector<NtaEntry> to_nta_entries<float>(const ParamList<float>&);
template std::vector<NtaEntry> to_nta_entries<double>(const ParamList<double>&);
template void assign_from_nta<float>(const std::vector<NtaEntry>&, const ParamList<float>&);
template void assign_from_nta<double>(const std::vector<NtaEntry>&, const ParamList<double>&);

}  // namespace posemoe
