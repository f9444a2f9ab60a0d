#include "onrw/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <stdexcept>

extern "C" {
#include <jpeglib.h>
}

namespace onrw::image {

const std::array<int, 64> kLumaQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,  69,  56,
    14, 17, 22, 29, 51,  87,  80,  62,  18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

const std::array<int, 64> kChromaQuant = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99};

std::array<int, 64> scaled_quant_table(const std::array<int, 64>& base, int quality)
{
    quality = std::clamp(quality, 1, 100);
    const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<int, 64> out{};
    for (int i = 0; i < 64; ++i) out[i] = std::clamp((base[i] * s + 50) / 100, 1, 255);
    return out;
}

std::uint8_t to_level(float v)
{
    const float b = std::nearbyint((v + 1.0f) * 127.5f);
    return static_cast<std::uint8_t>(std::clamp(b, 0.0f, 255.0f));
}

Rgb8 to_rgb8(const Tensor& img, int batch_index)
{
    if (img.rank() != 4 || img.dim(1) != 3) throw std::invalid_argument("to_rgb8: expected [B,3,H,W], got " + shape_str(img.shape()));
    Rgb8 out;
    out.height = img.dim(2);
    out.width = img.dim(3);
    out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                out.pixels[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] = to_level(img.at(batch_index, c, y, x));
    return out;
}

Tensor from_rgb8(const Rgb8& rgb)
{
    Tensor t({1, 3, rgb.height, rgb.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < rgb.height; ++y)
            for (int x = 0; x < rgb.width; ++x)
                t.at(0, c, y, x) = from_level(rgb.pixels[(static_cast<std::size_t>(y) * rgb.width + x) * 3 + c]);
    return t;
}

Tensor quantize8(const Tensor& img)
{
    Tensor out = img;
    for (auto& v : out.values()) v = from_level(to_level(v));
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode)
{
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path);
    return f;
}

}  // namespace

void save_png(const std::string& path, const Tensor& img)
{
    const Rgb8 rgb = to_rgb8(img);
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed to write " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, rgb.width, rgb.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < rgb.height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.pixels.data() + static_cast<std::size_t>(y) * rgb.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor load_png(const std::string& path)
{
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    Rgb8 rgb;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("failed to read " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    // Normalise every input flavour to 8-bit RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    const int ct = png_get_color_type(png, info);
    if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (ct == PNG_COLOR_TYPE_GRAY || ct == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    rgb.width = static_cast<int>(png_get_image_width(png, info));
    rgb.height = static_cast<int>(png_get_image_height(png, info));
    rgb.pixels.resize(static_cast<std::size_t>(rgb.width) * rgb.height * 3);
    std::vector<png_bytep> rows(rgb.height);
    for (int y = 0; y < rgb.height; ++y) rows[y] = rgb.pixels.data() + static_cast<std::size_t>(y) * rgb.width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return from_rgb8(rgb);
}

namespace {

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

}  // namespace

std::vector<std::uint8_t> encode_jpeg(const Rgb8& rgb, int quality, bool subsample)
{
    jpeg_compress_struct cinfo;
    JpegError err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buffer);
        throw std::runtime_error("libjpeg encode failed");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(rgb.width);
    cinfo.image_height = static_cast<JDIMENSION>(rgb.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, std::clamp(quality, 1, 100), TRUE);
    cinfo.dct_method = JDCT_ISLOW;
    const int h = subsample ? 2 : 1;
    cinfo.comp_info[0].h_samp_factor = h;
    cinfo.comp_info[0].v_samp_factor = h;
    for (int c = 1; c < 3; ++c) cinfo.comp_info[c].h_samp_factor = cinfo.comp_info[c].v_samp_factor = 1;
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(rgb.pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * rgb.width * 3);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    std::vector<std::uint8_t> out(buffer, buffer + size);
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    return out;
}

Rgb8 decode_jpeg(const std::vector<std::uint8_t>& bytes)
{
    jpeg_decompress_struct cinfo;
    JpegError err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("libjpeg decode failed");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    cinfo.dct_method = JDCT_ISLOW;
    jpeg_start_decompress(&cinfo);
    Rgb8 rgb;
    rgb.width = static_cast<int>(cinfo.output_width);
    rgb.height = static_cast<int>(cinfo.output_height);
    rgb.pixels.resize(static_cast<std::size_t>(rgb.width) * rgb.height * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = rgb.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * rgb.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return rgb;
}

Tensor jpeg_roundtrip(const Tensor& img, int quality, bool subsample)
{
    Tensor out = img;
    const std::size_t plane = static_cast<std::size_t>(3) * img.dim(2) * img.dim(3);
    for (int b = 0; b < img.dim(0); ++b) {
        const Tensor one = from_rgb8(decode_jpeg(encode_jpeg(to_rgb8(img, b), quality, subsample)));
        std::copy(one.data(), one.data() + plane, out.data() + b * plane);
    }
    return out;
}

}  // namespace onrw::image
