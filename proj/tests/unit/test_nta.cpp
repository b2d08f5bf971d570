// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "posemoe/errors.hpp"
#include "posemoe/nta.hpp"

namespace {

using namespace posemoe;

TEST(Nta, RandomArchivesRoundTrip) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<NtaEntry> entries;
        const std::size_t count = 1 + rng.below(5);
        for (std::size_t i = 0; i < count; ++i) {
            NtaEntry e;
            e.name = "t" + std::to_string(i);
            e.dtype = rng.below(2) ? Dtype::F32 : Dtype::F64;
            e.shape = Shape(1 + rng.below(3));
            for (auto& s : e.shape) s = 1 + rng.below(4);
            e.values.resize(shape_numel(e.shape));
            for (auto& v : e.values) v = e.dtype == Dtype::F32 ? static_cast<float>(rng.normal()) : rng.normal();
            entries.push_back(e);
        }
        auto decoded = decode_nta(encode_nta(entries));
        ASSERT_EQ(decoded.size(), entries.size());
        for (std::size_t i = 0; i < count; ++i) {
            EXPECT_EQ(decoded[i].name, entries[i].name);
            EXPECT_EQ(decoded[i].dtype, entries[i].dtype);
            EXPECT_EQ(decoded[i].shape, entries[i].shape);
            EXPECT_EQ(decoded[i].values, entries[i].values);
        }
    }
}

TEST(Nta, LayoutIsMagicLengthJsonPayload) {
    NtaEntry e{"w", Dtype::F64, {1}, {1.5}};
    auto bytes = encode_nta({e});
    ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "NTA1\n");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
    const std::string header(bytes.begin() + 13, bytes.begin() + 13 + static_cast<long>(len));
    EXPECT_NE(header.find("\"byte_offset\":0"), std::string::npos);
    EXPECT_NE(header.find("\"dtype\":\"f64\""), std::string::npos);
    ASSERT_EQ(bytes.size(), 13 + len + 8);
    double v;
    std::memcpy(&v, bytes.data() + 13 + len, 8);
    EXPECT_EQ(v, 1.5);
}

TEST(Nta, RejectsUnknownMagicAndDtype) {
    NtaEntry e{"w", Dtype::F32, {2}, {1.0, 2.0}};
    auto bytes = encode_nta({e});
    auto bad_magic = bytes;
    bad_magic[3] = '2';
    EXPECT_THROW(decode_nta(bad_magic), CheckpointError);
    std::string text(bytes.begin(), bytes.end());
    auto pos = text.find("\"f32\"");
    ASSERT_NE(pos, std::string::npos);
    auto bad_dtype = bytes;
    bad_dtype[pos + 1] = 'i';
    EXPECT_THROW(decode_nta(bad_dtype), CheckpointError);
}

TEST(Nta, AssignsParametersByNameAndChecksShape) {
    Tensor<float> a({2, 2}, {1, 2, 3, 4}, true), b({3}, {5, 6, 7}, true);
    ParamList<float> params{{"a", a}, {"b", b}};
    auto path = std::filesystem::temp_directory_path() / "posemoe_nta_test.nta";
    write_nta(path, to_nta_entries(params));
    Tensor<float> a2({2, 2}, true), b2({3}, true);
    assign_from_nta(read_nta(path), ParamList<float>{{"b", b2}, {"a", a2}});
    EXPECT_EQ(a2.values(), a.values());
    EXPECT_EQ(b2.values(), b.values());
    Tensor<float> wrong({4}, true);
    EXPECT_THROW(assign_from_nta(read_nta(path), ParamList<float>{{"b", wrong}}), CheckpointError);
    std::filesystem::remove(path);
}

}  // namespace
