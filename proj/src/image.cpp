#include "bamnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>
#include <jerror.h>
#include <png.h>

namespace bamnet {
namespace {

constexpr char kTruncated[] = "truncated stream";

// ---- PNG ----------------------------------------------------------------

struct PngSource {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

struct PngFailure {
    std::string message;
};

void png_read_memory(png_structp png, png_bytep out, png_size_t n) {
    auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
    if (n > src->size - src->pos) png_error(png, kTruncated);
    std::memcpy(out, src->data + src->pos, n);
    src->pos += n;
}

void png_on_error(png_structp png, png_const_charp msg) {
    static_cast<PngFailure*>(png_get_error_ptr(png))->message = msg;
    png_longjmp(png, 1);
}

void png_on_warning(png_structp, png_const_charp) {}

Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& where) {
    PngFailure failure;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &failure, png_on_error, png_on_warning);
    if (png == nullptr) throw ImageError(where, "out of memory");
    png_infop info = png_create_info_struct(png);
    PngSource src{bytes.data(), bytes.size(), 0};
    Image img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError(where, failure.message);
    }
    png_set_read_fn(png, &src, png_read_memory);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_scale_16(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    if (img.channels != 1 && img.channels != 3) png_error(png, "unsupported channel layout");
    img.pixels.resize(img.width * img.height * img.channels);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void png_write_memory(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void png_flush_memory(png_structp) {}

// ---- JPEG ---------------------------------------------------------------

struct JpegErrors {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    std::string message;
};

void jpeg_on_error(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrors*>(cinfo->err);
    char buf[JMSG_LENGTH_MAX];
    (*cinfo->err->format_message)(cinfo, buf);
    err->message = buf;
    std::longjmp(err->jump, 1);
}

// libjpeg reports a short stream as a warning and pads with a fake EOI;
// treat that (and any other corrupt-data warning) as fatal.
void jpeg_on_message(j_common_ptr cinfo, int level) {
    if (level >= 0) return;
    auto* err = reinterpret_cast<JpegErrors*>(cinfo->err);
    if (cinfo->err->msg_code == JWRN_JPEG_EOF) {
        err->message = kTruncated;
    } else {
        char buf[JMSG_LENGTH_MAX];
        (*cinfo->err->format_message)(cinfo, buf);
        err->message = buf;
    }
    std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& where) {
    jpeg_decompress_struct cinfo{};
    JpegErrors err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_on_error;
    err.base.emit_message = jpeg_on_message;
    Image img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw ImageError(where, err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img.width = cinfo.output_width;
    img.height = cinfo.output_height;
    img.channels = static_cast<std::size_t>(cinfo.output_components);
    img.pixels.resize(img.width * img.height * img.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.pixels.data() + cinfo.output_scanline * img.width * img.channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

void check_image(const Image& image, const char* what) {
    if (image.width == 0 || image.height == 0 || (image.channels != 1 && image.channels != 3) ||
        image.pixels.size() != image.width * image.height * image.channels) {
        throw std::invalid_argument(std::string(what) + ": malformed image buffer");
    }
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError(path.string(), "cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image decode_image(const std::vector<std::uint8_t>& bytes, const std::string& where) {
    static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.empty()) throw ImageError(where, "empty file");
    if (bytes.size() >= 8 && std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) return decode_png(bytes, where);
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes, where);
    if (bytes.size() < 8) throw ImageError(where, kTruncated);
    throw ImageError(where, "unsupported format");
}

Image read_image(const std::filesystem::path& path) { return decode_image(read_file_bytes(path), path.string()); }

std::vector<std::uint8_t> encode_png(const Image& image) {
    check_image(image, "encode_png");
    std::vector<std::uint8_t> out;
    PngFailure failure;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &failure, png_on_error, png_on_warning);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("encode_png: " + failure.message);
    }
    png_set_write_fn(png, &out, png_write_memory, png_flush_memory);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y) {
        png_write_row(png, image.pixels.data() + y * image.width * image.channels);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality) {
    check_image(image, "encode_jpeg");
    jpeg_compress_struct cinfo{};
    JpegErrors err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_on_error;
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buffer);
        throw std::runtime_error("encode_jpeg: " + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(image.width);
    cinfo.image_height = static_cast<JDIMENSION>(image.height);
    cinfo.input_components = static_cast<int>(image.channels);
    cinfo.in_color_space = image.channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(image.pixels.data() + cinfo.next_scanline * image.width * image.channels);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    std::vector<std::uint8_t> out(buffer, buffer + size);
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

Tensor<float> resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
    check_image(image, "resize_bilinear");
    if (height == 0 || width == 0) throw std::invalid_argument("resize_bilinear: target extent must be positive");
    const std::size_t C = image.channels, H = image.height, W = image.width;

    struct Tap {
        std::size_t i0, i1;
        double w1;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(src);
            t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(H, height), tx = taps(W, width);

    Tensor<float> out({C, height, width});
    const std::uint8_t* px = image.pixels.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < height; ++y) {
            const Tap& a = ty[y];
            const std::uint8_t* r0 = px + a.i0 * W * C;
            const std::uint8_t* r1 = px + a.i1 * W * C;
            float* dst = out.ptr() + (c * height + y) * width;
            for (std::size_t x = 0; x < width; ++x) {
                const Tap& b = tx[x];
                const double top = r0[b.i0 * C + c] + b.w1 * (r0[b.i1 * C + c] - r0[b.i0 * C + c]);
                const double bot = r1[b.i0 * C + c] + b.w1 * (r1[b.i1 * C + c] - r1[b.i0 * C + c]);
                dst[x] = static_cast<float>(top + a.w1 * (bot - top));
            }
        }
    }
    return out;
}

Tensor<float> to_model_input(const Image& image, std::size_t height, std::size_t width, std::size_t channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("model input must have 1 or 3 channels");
    Image src = image;
    if (image.channels == 3 && channels == 1) {
        src.channels = 1;
        src.pixels.resize(image.width * image.height);
        for (std::size_t i = 0; i < src.pixels.size(); ++i) {
            const std::uint8_t* p = image.pixels.data() + 3 * i;
            src.pixels[i] = static_cast<std::uint8_t>(std::lround(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]));
        }
    }
    const Tensor<float> resized = resize_bilinear(src, height, width);
    Tensor<float> out({channels, height, width});
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        const float* from = resized.ptr() + (src.channels == 1 ? 0 : c) * plane;
        float* to = out.ptr() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) to[i] = from[i] / 255.0f;
    }
    return out;
}

Tensor<float> load_and_resize(const std::filesystem::path& path, std::size_t height, std::size_t width,
                              std::size_t channels) {
    return to_model_input(read_image(path), height, width, channels);
}

}  // namespace bamnet
