#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "bamnet/tensor.hpp"

namespace bamnet {

/// Decode failure. `reason` is a short classification ("empty file",
/// "truncated stream", "unsupported format" or the codec's message).
class ImageError : public std::runtime_error {
public:
    ImageError(const std::string& where, std::string reason)
        : std::runtime_error(where + ": " + reason), reason_(std::move(reason)) {}
    [[nodiscard]] const std::string& reason() const { return reason_; }

private:
    std::string reason_;
};

/// 8-bit interleaved pixels, 1 (gray) or 3 (RGB) channels.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;
};

/// Fully decodes PNG or baseline JPEG bytes (format sniffed from the
/// signature). Alpha is dropped, palettes expanded, 16-bit samples scaled to
/// 8 bits.
Image decode_image(const std::vector<std::uint8_t>& bytes, const std::string& where = "image");
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality = 95);
void write_png(const std::filesystem::path& path, const Image& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Bilinear resize with half-pixel centers and edge clamping, per channel.
/// Output is planar C x H x W in source units.
Tensor<float> resize_bilinear(const Image& image, std::size_t height, std::size_t width);

/// Decode, match `channels` (gray replicated; RGB passed through, or reduced
/// to luma for one channel), resize bilinearly and scale to [0, 1].
Tensor<float> load_and_resize(const std::filesystem::path& path, std::size_t height, std::size_t width,
                              std::size_t channels);
Tensor<float> to_model_input(const Image& image, std::size_t height, std::size_t width, std::size_t channels);

}  // namespace bamnet
