#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "bamnet/data.hpp"
#include "bamnet/image.hpp"
#include "bamnet/random.hpp"

namespace bamnet::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = fs::temp_directory_path() / ("bamnet_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

inline void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Grayscale bar texture: vertical bars for Fractured, horizontal for
/// Non_fractured, with random period, phase, contrast and pixel noise.
inline Image texture_image(ClassLabel label, std::size_t extent, std::uint64_t seed) {
    Rng rng(seed);
    const double period = rng.uniform(6.0, 16.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amplitude = rng.uniform(50.0, 90.0);
    const double base = rng.uniform(100.0, 150.0);
    Image img{extent, extent, 1, std::vector<std::uint8_t>(extent * extent)};
    for (std::size_t y = 0; y < extent; ++y) {
        for (std::size_t x = 0; x < extent; ++x) {
            const double t = static_cast<double>(label == ClassLabel::Fractured ? x : y);
            const double v = base + amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase) +
                             rng.uniform(-20.0, 20.0);
            img.pixels[y * extent + x] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return img;
}

/// Writes `per_class` PNG textures into root/Fractured and root/Non_fractured.
inline void write_texture_tree(const fs::path& root, std::size_t per_class, std::size_t extent, std::uint64_t seed) {
    for (ClassLabel label : {ClassLabel::Fractured, ClassLabel::NonFractured}) {
        for (std::size_t i = 0; i < per_class; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "img%04zu.png", i);
            const std::uint64_t s = mix_seed(seed, i * 2 + static_cast<std::size_t>(label));
            write_bytes(root / class_directory(label) / name, encode_png(texture_image(label, extent, s)));
        }
    }
}

}  // namespace bamnet::testing
