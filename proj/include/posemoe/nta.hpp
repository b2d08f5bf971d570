// SPDX-License-Identifier: Apache-2.0
//
// NTA1 named tensor archive:
//   "NTA1\n" | u64 little-endian header length | UTF-8 JSON header | payload
// The header is a JSON array of {name, dtype ∈ {"f32","f64"}, shape, byte_offset};
// byte_offset counts from the start of the payload, which holds raw
// little-endian IEEE-754 values.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "posemoe/nn.hpp"

namespace posemoe {

enum class Dtype { F32, F64 };

std::string dtype_name(Dtype dtype);
Dtype parse_dtype(const std::string& name);

struct NtaEntry {
    std::string name;
    Dtype dtype = Dtype::F32;
    Shape shape;
    std::vector<double> values;  // widened; written back at `dtype` precision
};

std::vector<char> encode_nta(const std::vector<NtaEntry>& entries);
std::vector<NtaEntry> decode_nta(const std::vector<char>& bytes);

void write_nta(const std::filesystem::path& path, const std::vector<NtaEntry>& entries);
std::vector<NtaEntry> read_nta(const std::filesystem::path& path);

template <typename T>
std::vector<NtaEntry> to_nta_entries(const ParamList<T>& params);

/// Copies archive values into `params`, matched by name. Every parameter must
/// be present with an identical shape.
template <typename T>
void assign_from_nta(const std::vector<NtaEntry>& entries, const ParamList<T>& params);

}  // namespace posemoe
