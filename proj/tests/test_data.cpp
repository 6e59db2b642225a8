#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "bamnet/data.hpp"
#include "bamnet/image.hpp"
#include "bamnet/random.hpp"
#include "fixtures.hpp"

namespace bamnet {
namespace {

namespace fs = std::filesystem;

using testing::TempDir;
using testing::write_bytes;

Image noise_image(std::size_t w, std::size_t h, std::size_t c, std::uint64_t seed) {
    Image img{w, h, c, std::vector<std::uint8_t>(w * h * c)};
    Rng rng(seed);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

DatasetManifest synthetic_manifest(std::size_t fractured, std::size_t non_fractured) {
    DatasetManifest m;
    m.root = "/data";
    char buf[64];
    for (std::size_t i = 0; i < fractured; ++i) {
        std::snprintf(buf, sizeof buf, "Fractured/img%05zu.jpg", i);
        m.entries.push_back({buf, ClassLabel::Fractured, 100});
    }
    for (std::size_t i = 0; i < non_fractured; ++i) {
        std::snprintf(buf, sizeof buf, "Non_fractured/img%05zu.jpg", i);
        m.entries.push_back({buf, ClassLabel::NonFractured, 100});
    }
    return m;
}

// ---- apportionment and splitting -----------------------------------------

TEST(LargestRemainder, PaperTotals) {
    EXPECT_EQ(largest_remainder(4083, {0.80, 0.115, 0.085}), (std::array<std::size_t, 3>{3266, 470, 347}));
    EXPECT_EQ(largest_remainder(10, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{8, 1, 1}));
}

TEST(LargestRemainder, SumsExactlyAndStaysWithinOne) {
    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t total = rng.below(5000);
        std::array<double, 3> w{rng.uniform(0.01, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
        const double s = w[0] + w[1] + w[2];
        for (auto& v : w) v /= s;
        const auto c = largest_remainder(total, w);
        EXPECT_EQ(c[0] + c[1] + c[2], total);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_LT(std::abs(static_cast<double>(c[k]) - w[k] * total), 1.0);
    }
}

TEST(SplitDataset, PaperCountsAndPartition) {
    const auto m = synthetic_manifest(717, 3366);
    const auto s = split_dataset(m, {}, 42);
    EXPECT_EQ(s.counts(), (std::array<std::size_t, 3>{3266, 470, 347}));
    ASSERT_EQ(s.entries.size(), m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        EXPECT_EQ(s.entries[i].path, m.entries[i].path);
        EXPECT_EQ(s.entries[i].label, m.entries[i].label);
    }
    std::set<std::string> seen;
    for (Split sp : {Split::Train, Split::Val, Split::Test})
        for (const auto& e : s.entries_in(sp)) EXPECT_TRUE(seen.insert(e.path).second);
    EXPECT_EQ(seen.size(), m.entries.size());
}

TEST(SplitDataset, TenEntries) {
    EXPECT_EQ(split_dataset(synthetic_manifest(3, 7), {0.8, 0.1, 0.1}, 0).counts(),
              (std::array<std::size_t, 3>{8, 1, 1}));
}

TEST(SplitDataset, DeterministicPerSeed) {
    const auto m = synthetic_manifest(50, 150);
    const auto a = split_dataset(m, {}, 7), b = split_dataset(m, {}, 7), c = split_dataset(m, {}, 8);
    EXPECT_EQ(a, b);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    EXPECT_NE(a.entries, c.entries);
    EXPECT_EQ(a.counts(), c.counts());
}

TEST(SplitDataset, FixedAssignmentsKeptAndTotalsStillMatch) {
    const auto m = synthetic_manifest(717, 3366);
    FixedAssignments fixed;
    // a provider split of the fractured class, roughly 80/11.5/8.5
    for (std::size_t i = 0; i < 717; ++i) {
        fixed[m.entries[i].path] = i < 574 ? Split::Train : (i < 656 ? Split::Val : Split::Test);
    }
    const auto s = split_dataset(m, {}, 3, fixed);
    for (const auto& e : s.entries) {
        auto it = fixed.find(e.path);
        if (it != fixed.end()) EXPECT_EQ(e.split, it->second) << e.path;
    }
    EXPECT_EQ(s.counts(), (std::array<std::size_t, 3>{3266, 470, 347}));
}

TEST(SplitDataset, Rejections) {
    const auto m = synthetic_manifest(5, 5);
    EXPECT_THROW(split_dataset(m, {0.8, 0.1, 0.2}, 0), DataError);
    EXPECT_THROW(split_dataset(m, {0.9, 0.1, 0.0}, 0), DataError);
    EXPECT_THROW(split_dataset(m, {}, 0, {{"Fractured/missing.png", Split::Val}}), DataError);
}

TEST(SplitManifest, JsonRoundTrip) {
    auto s = split_dataset(synthetic_manifest(4, 6), {}, 5);
    s.rejected = {{"Fractured/bad.png", "truncated stream"}};
    s.channels = 1;
    const auto j = to_json(s);
    EXPECT_EQ(split_manifest_from_json(nlohmann::json::parse(j.dump())), s);
    for (const char* key : {"root", "seed", "ratios", "entries", "rejected"}) EXPECT_TRUE(j.contains(key)) << key;
}

// ---- batching ---------------------------------------------------------------

TEST(MakeBatches, ShortLastBatchKept) {
    const auto b = make_batches(347, 32, 1, 0);
    ASSERT_EQ(b.size(), 11u);
    EXPECT_EQ(b.back().size(), 27u);
    EXPECT_EQ(make_batches(347, 32, 1, 0, true).size(), 10u);
    EXPECT_EQ(make_batches(13, 1, 1, 0).size(), 13u);
}

TEST(MakeBatches, EachIndexOncePerEpochAndSeededByEpoch) {
    const auto a = make_batches(100, 7, 9, 0), again = make_batches(100, 7, 9, 0), next = make_batches(100, 7, 9, 1);
    EXPECT_EQ(a, again);
    EXPECT_NE(a, next);
    for (const auto& epoch : {a, next}) {
        std::vector<int> hits(100, 0);
        for (const auto& batch : epoch)
            for (auto i : batch) ++hits[i];
        for (int h : hits) EXPECT_EQ(h, 1);
    }
}

TEST(MakeBatches, Rejections) {
    EXPECT_THROW(make_batches(0, 4, 0, 0), DataError);
    EXPECT_THROW(make_batches(4, 0, 0, 0), DataError);
}

// ---- scanning and pruning -------------------------------------------------

TEST(ScanDataset, CountsSortsAndIgnoresOtherFiles) {
    TempDir dir("scan");
    for (std::size_t i = 0; i < 717; ++i) write_bytes(dir.path() / "Fractured" / ("f" + std::to_string(i) + ".jpg"), {1});
    for (std::size_t i = 0; i < 3366; ++i) {
        const std::string sub = i % 2 ? "a" : "b/c";
        write_bytes(dir.path() / "Non_fractured" / sub / ("n" + std::to_string(i) + (i % 3 ? ".png" : ".JPEG")), {1, 2});
    }
    write_bytes(dir.path() / "Fractured" / "notes.txt", {1});
    write_bytes(dir.path() / "Fractured" / "mask.json", {1});
    const auto m = scan_dataset(dir.path());
    ASSERT_EQ(m.entries.size(), 4083u);
    EXPECT_TRUE(std::is_sorted(m.entries.begin(), m.entries.end(),
                               [](const auto& a, const auto& b) { return a.path < b.path; }));
    std::size_t fractured = 0;
    for (const auto& e : m.entries) fractured += e.label == ClassLabel::Fractured;
    EXPECT_EQ(fractured, 717u);
    EXPECT_EQ(to_json(scan_dataset(dir.path()), false).dump(), to_json(m, false).dump());
}

TEST(ScanDataset, MissingOrEmptyClassNamed) {
    TempDir dir("scan_bad");
    try {
        scan_dataset(dir.path());
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("Fractured"), std::string::npos) << e.what();
    }
    write_bytes(dir.path() / "Fractured" / "a.png", {1});
    fs::create_directories(dir.path() / "Non_fractured");
    try {
        scan_dataset(dir.path());
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("Non_fractured"), std::string::npos) << e.what();
    }
}

class PruneFixture : public ::testing::Test {
protected:
    void SetUp() override {
        for (std::size_t i = 0; i < 5; ++i) {
            write_bytes(dir.path() / "Fractured" / ("f" + std::to_string(i) + ".png"),
                        encode_png(noise_image(20 + i, 16, i % 2 ? 3 : 1, i)));
            write_bytes(dir.path() / "Non_fractured" / ("n" + std::to_string(i) + ".jpg"),
                        encode_jpeg(noise_image(24, 18 + i, i % 2 ? 1 : 3, 10 + i)));
        }
    }
    TempDir dir{"prune"};
};

TEST_F(PruneFixture, CleanSetAllAccepted) {
    const auto m = scan_dataset(dir.path());
    const auto r = prune_corrupted(m);
    EXPECT_EQ(r.accepted.entries, m.entries);
    EXPECT_TRUE(r.rejected.empty());
}

TEST_F(PruneFixture, CorruptFilesRejectedWithReasons) {
    const auto good = encode_png(noise_image(64, 64, 1, 99));
    write_bytes(dir.path() / "Fractured" / "half.png",
                std::vector<std::uint8_t>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2)));
    write_bytes(dir.path() / "Fractured" / "zero.png", {});
    const auto jpg = encode_jpeg(noise_image(64, 64, 3, 98));
    write_bytes(dir.path() / "Non_fractured" / "half.jpg",
                std::vector<std::uint8_t>(jpg.begin(), jpg.begin() + static_cast<std::ptrdiff_t>(jpg.size() / 2)));
    auto garbled = good;
    for (std::size_t i = 60; i < 80; ++i) garbled[i] ^= 0xFF;
    write_bytes(dir.path() / "Non_fractured" / "garbled.png", garbled);

    const auto m = scan_dataset(dir.path());
    const auto r1 = prune_corrupted(m, 1);
    const auto r4 = prune_corrupted(m, 4);
    EXPECT_EQ(r1.accepted.entries, r4.accepted.entries);
    EXPECT_EQ(r1.rejected, r4.rejected);
    EXPECT_EQ(r1.accepted.entries.size(), 10u);
    ASSERT_EQ(r1.rejected.size(), 4u);
    std::map<std::string, std::string> reason;
    for (const auto& rj : r1.rejected) reason[rj.path] = rj.reason;
    EXPECT_EQ(reason["Fractured/half.png"], "truncated stream");
    EXPECT_EQ(reason["Fractured/zero.png"], "empty file");
    EXPECT_EQ(reason["Non_fractured/half.jpg"], "truncated stream");
    EXPECT_FALSE(reason["Non_fractured/garbled.png"].empty());
    // accepted entries keep manifest order
    EXPECT_TRUE(std::is_sorted(r1.accepted.entries.begin(), r1.accepted.entries.end(),
                               [](const auto& a, const auto& b) { return a.path < b.path; }));
}

// ---- decode and resize ------------------------------------------------------

TEST(Codec, PngRoundTripIsLossless) {
    for (std::size_t c : {1, 3}) {
        const auto img = noise_image(17, 9, c, c);
        const auto back = decode_image(encode_png(img));
        EXPECT_EQ(back.width, 17u);
        EXPECT_EQ(back.height, 9u);
        EXPECT_EQ(back.channels, c);
        EXPECT_EQ(back.pixels, img.pixels);
    }
}

TEST(Codec, JpegDecodesToSameGeometry) {
    Image flat{32, 16, 3, std::vector<std::uint8_t>(32 * 16 * 3, 77)};
    const auto back = decode_image(encode_jpeg(flat));
    EXPECT_EQ(back.width, 32u);
    EXPECT_EQ(back.channels, 3u);
    for (auto v : back.pixels) EXPECT_NEAR(v, 77, 1);
}

TEST(Codec, DecodeFailureCarriesPath) {
    TempDir dir("codec");
    write_bytes(dir.path() / "x.png", {1, 2, 3, 4, 5, 6, 7, 8, 9});
    try {
        load_and_resize(dir.path() / "x.png", 8, 8, 3);
        FAIL();
    } catch (const ImageError& e) {
        EXPECT_NE(std::string(e.what()).find("x.png"), std::string::npos);
    }
}

// Direct per-pixel bilinear with half-pixel centers and edge clamping.
double reference_bilinear(const Image& img, std::size_t c, std::size_t oy, std::size_t ox, std::size_t oh,
                          std::size_t ow) {
    auto src = [](std::size_t o, std::size_t in, std::size_t out) {
        double s = (o + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        return std::min(std::max(s, 0.0), static_cast<double>(in) - 1.0);
    };
    const double sy = src(oy, img.height, oh), sx = src(ox, img.width, ow);
    const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    auto px = [&](std::size_t y, std::size_t x) { return static_cast<double>(img.pixels[(y * img.width + x) * img.channels + c]); };
    return (1 - fy) * (1 - fx) * px(y0, x0) + (1 - fy) * fx * px(y0, x1) + fy * (1 - fx) * px(y1, x0) + fy * fx * px(y1, x1);
}

TEST(Resize, CheckerboardMatchesReference) {
    Image board{4, 4, 1, {}};
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) board.pixels.push_back((x + y) % 2 ? 255 : 0);
    const auto out = to_model_input(board, 8, 8, 1);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            EXPECT_NEAR(out[y * 8 + x], reference_bilinear(board, 0, y, x, 8, 8) / 255.0, 1e-5);
}

TEST(Resize, RandomRgbMatchesReference) {
    const auto img = noise_image(13, 7, 3, 4);
    const auto out = resize_bilinear(img, 5, 20);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 5; ++y)
            for (std::size_t x = 0; x < 20; ++x)
                EXPECT_NEAR(out[(c * 5 + y) * 20 + x], reference_bilinear(img, c, y, x, 5, 20), 1e-3);
}

TEST(Resize, ConstantFullResolutionImage) {
    TempDir dir("const");
    write_bytes(dir.path() / "flat.png", encode_png(Image{2304, 2880, 1, std::vector<std::uint8_t>(2304 * 2880, 128)}));
    const auto t = load_and_resize(dir.path() / "flat.png", 224, 224, 3);
    EXPECT_EQ(t.shape(), (Shape{3, 224, 224}));
    for (float v : t.data()) ASSERT_NEAR(v, 128.0 / 255.0, 1e-6);
}

TEST(Resize, IdentityAtTargetSize) {
    const auto img = noise_image(224, 224, 1, 5);
    const auto t = to_model_input(img, 224, 224, 1);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) ASSERT_NEAR(t[i], img.pixels[i] / 255.0, 1e-6);
}

TEST(Resize, ChannelMatching) {
    const auto gray = noise_image(6, 6, 1, 6);
    const auto g3 = to_model_input(gray, 6, 6, 3);
    for (std::size_t i = 0; i < 36; ++i) {
        EXPECT_EQ(g3[i], g3[36 + i]);
        EXPECT_EQ(g3[i], g3[72 + i]);
    }
    const auto rgb = noise_image(6, 6, 3, 7);
    const auto r3 = to_model_input(rgb, 6, 6, 3);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 36; ++i) ASSERT_NEAR(r3[c * 36 + i], rgb.pixels[i * 3 + c] / 255.0, 1e-6);
    const auto r1 = to_model_input(rgb, 6, 6, 1);
    EXPECT_EQ(r1.shape(), (Shape{1, 6, 6}));
    for (float v : r1.data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

}  // namespace
}  // namespace bamnet
