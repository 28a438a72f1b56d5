#pragma once

// Minimal raster I/O: 8-bit PNG (gray / RGB / RGBA, no interlace) backed by
// zlib, PGM as a zero-dependency fallback, plus the small drawing helpers the
// visualizer needs (blue-to-red colormap, nearest upscale, 3x5 digit font).

#include <cstdint>
#include <string>
#include <vector>

namespace pareid {

struct ImageU8 {
    int h = 0, w = 0, channels = 0;  // interleaved rows
    std::vector<std::uint8_t> data;

    ImageU8() = default;
    ImageU8(int h, int w, int channels, std::uint8_t fill = 0)
        : h(h), w(w), channels(channels), data(std::size_t(h) * w * channels, fill) {}
    std::uint8_t& at(int y, int x, int c) { return data[(std::size_t(y) * w + x) * channels + c]; }
    std::uint8_t at(int y, int x, int c) const {
        return data[(std::size_t(y) * w + x) * channels + c];
    }
};

std::vector<std::uint8_t> encode_png(const ImageU8& img);
ImageU8 decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

void write_pgm(const std::string& path, const ImageU8& gray);
ImageU8 read_pgm(const std::string& path);

// Channel-major [3,H,W] floats in [0,1] <-> interleaved bytes.
ImageU8 from_chw(const std::vector<float>& chw, int h, int w);
std::vector<float> to_chw(const ImageU8& img);

// t in [0,1]: blue through green to red.
void colormap_cold_hot(float t, std::uint8_t rgb[3]);

ImageU8 upscale_nearest(const ImageU8& img, int factor);

// Digits, '.', '-', ':' and space in a 3x5 pixel font, scaled up.
void draw_text(ImageU8& img, int y, int x, const std::string& text, int scale,
               const std::uint8_t rgb[3]);

}  // namespace pareid
