#include "pareid/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pareid {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& body) {
    put_u32(out, std::uint32_t(body.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    const std::uint32_t crc =
        std::uint32_t(crc32(0L, out.data() + start, uInt(out.size() - start)));
    put_u32(out, crc);
}

int png_color_type(int channels) {
    switch (channels) {
        case 1: return 0;
        case 3: return 2;
        case 4: return 6;
        default: throw std::invalid_argument("png: unsupported channel count " +
                                             std::to_string(channels));
    }
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return std::uint8_t(a);
    if (pb <= pc) return std::uint8_t(b);
    return std::uint8_t(c);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const ImageU8& img) {
    if (img.h <= 0 || img.w <= 0) throw std::invalid_argument("png: empty image");
    png_color_type(img.channels);
    const std::size_t row = std::size_t(img.w) * img.channels;
    std::vector<std::uint8_t> raw((row + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        raw[y * (row + 1)] = 0;  // filter: none
        std::memcpy(&raw[y * (row + 1) + 1], &img.data[y * row], row);
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, std::uint32_t(img.w));
    put_u32(ihdr, std::uint32_t(img.h));
    ihdr.push_back(8);                                     // bit depth
    ihdr.push_back(std::uint8_t(png_color_type(img.channels)));
    ihdr.push_back(0);                                     // compression
    ihdr.push_back(0);                                     // filter method
    ihdr.push_back(0);                                     // no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});
    return out;
}

ImageU8 decode_png(const std::vector<std::uint8_t>& bytes) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("png: bad signature");
    std::size_t pos = 8;
    int w = 0, h = 0, channels = 0;
    std::vector<std::uint8_t> idat;
    bool done = false;
    while (!done) {
        if (pos + 8 > bytes.size()) throw std::runtime_error("png: truncated chunk header");
        const std::uint32_t len = get_u32(&bytes[pos]);
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk body");
        const std::uint8_t* body = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("png: bad IHDR length");
            w = int(get_u32(body));
            h = int(get_u32(body + 4));
            if (body[8] != 8) throw std::runtime_error("png: only 8-bit depth supported");
            switch (body[9]) {
                case 0: channels = 1; break;
                case 2: channels = 3; break;
                case 6: channels = 4; break;
                default: throw std::runtime_error("png: unsupported color type");
            }
            if (body[12] != 0) throw std::runtime_error("png: interlace not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), body, body + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            done = true;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0 || channels == 0) throw std::runtime_error("png: missing IHDR");

    const std::size_t row = std::size_t(w) * channels;
    std::vector<std::uint8_t> raw((row + 1) * h);
    uLongf raw_len = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("png: inflate failed");

    ImageU8 img(h, w, channels);
    const int bpp = channels;  // bytes per pixel at 8-bit depth
    std::vector<std::uint8_t> prev(row, 0);
    for (int y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[y * (row + 1)];
        std::uint8_t* cur = &img.data[y * row];
        std::memcpy(cur, &raw[y * (row + 1) + 1], row);
        switch (filter) {
            case 0: break;
            case 1:
                for (std::size_t i = bpp; i < row; ++i) cur[i] += cur[i - bpp];
                break;
            case 2:
                for (std::size_t i = 0; i < row; ++i) cur[i] += prev[i];
                break;
            case 3:
                for (std::size_t i = 0; i < row; ++i) {
                    const int left = i >= std::size_t(bpp) ? cur[i - bpp] : 0;
                    cur[i] += std::uint8_t((left + prev[i]) / 2);
                }
                break;
            case 4:
                for (std::size_t i = 0; i < row; ++i) {
                    const int left = i >= std::size_t(bpp) ? cur[i - bpp] : 0;
                    const int upleft = i >= std::size_t(bpp) ? prev[i - bpp] : 0;
                    cur[i] += paeth(left, prev[i], upleft);
                }
                break;
            default: throw std::runtime_error("png: unknown filter type");
        }
        std::memcpy(prev.data(), cur, row);
    }
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    const std::vector<std::uint8_t> bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("png: write failed: " + path);
}

ImageU8 read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

void write_pgm(const std::string& path, const ImageU8& gray) {
    if (gray.channels != 1) throw std::invalid_argument("pgm: single-channel only");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open for write: " + path);
    f << "P5\n" << gray.w << " " << gray.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(gray.data.data()), std::streamsize(gray.data.size()));
    if (!f) throw std::runtime_error("pgm: write failed: " + path);
}

ImageU8 read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("pgm: unsupported header in " + path);
    f.get();  // single whitespace after maxval
    ImageU8 img(h, w, 1);
    f.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size()));
    if (!f) throw std::runtime_error("pgm: truncated data in " + path);
    return img;
}

ImageU8 from_chw(const std::vector<float>& chw, int h, int w) {
    if (chw.size() != std::size_t(3) * h * w)
        throw std::invalid_argument("from_chw: buffer has " + std::to_string(chw.size()) +
                                    " values for 3x" + std::to_string(h) + "x" + std::to_string(w));
    ImageU8 img(h, w, 3);
    const std::size_t plane = std::size_t(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = chw[c * plane + std::size_t(y) * w + x];
                img.at(y, x, c) =
                    std::uint8_t(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f));
            }
    return img;
}

std::vector<float> to_chw(const ImageU8& img) {
    if (img.channels < 3) {
        // replicate gray into three channels
        std::vector<float> chw(std::size_t(3) * img.h * img.w);
        const std::size_t plane = std::size_t(img.h) * img.w;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                const float v = float(img.at(y, x, 0)) / 255.0f;
                for (int c = 0; c < 3; ++c) chw[c * plane + std::size_t(y) * img.w + x] = v;
            }
        return chw;
    }
    std::vector<float> chw(std::size_t(3) * img.h * img.w);
    const std::size_t plane = std::size_t(img.h) * img.w;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                chw[c * plane + std::size_t(y) * img.w + x] = float(img.at(y, x, c)) / 255.0f;
    return chw;
}

void colormap_cold_hot(float t, std::uint8_t rgb[3]) {
    t = std::min(1.0f, std::max(0.0f, t));
    // piecewise blue -> cyan -> green -> yellow -> red
    float r, g, b;
    if (t < 0.25f) {
        r = 0, g = t / 0.25f, b = 1;
    } else if (t < 0.5f) {
        r = 0, g = 1, b = 1 - (t - 0.25f) / 0.25f;
    } else if (t < 0.75f) {
        r = (t - 0.5f) / 0.25f, g = 1, b = 0;
    } else {
        r = 1, g = 1 - (t - 0.75f) / 0.25f, b = 0;
    }
    rgb[0] = std::uint8_t(std::lround(r * 255));
    rgb[1] = std::uint8_t(std::lround(g * 255));
    rgb[2] = std::uint8_t(std::lround(b * 255));
}

ImageU8 upscale_nearest(const ImageU8& img, int factor) {
    if (factor < 1) throw std::invalid_argument("upscale: factor must be >= 1");
    ImageU8 out(img.h * factor, img.w * factor, img.channels);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(y / factor, x / factor, c);
    return out;
}

namespace {

// 3x5 glyphs, rows top-down, 3 bits per row (msb = left column).
constexpr std::uint16_t kGlyphRows[][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111},  // 0
    {0b010, 0b110, 0b010, 0b010, 0b111},  // 1
    {0b111, 0b001, 0b111, 0b100, 0b111},  // 2
    {0b111, 0b001, 0b111, 0b001, 0b111},  // 3
    {0b101, 0b101, 0b111, 0b001, 0b001},  // 4
    {0b111, 0b100, 0b111, 0b001, 0b111},  // 5
    {0b111, 0b100, 0b111, 0b101, 0b111},  // 6
    {0b111, 0b001, 0b010, 0b010, 0b010},  // 7
    {0b111, 0b101, 0b111, 0b101, 0b111},  // 8
    {0b111, 0b101, 0b111, 0b001, 0b111},  // 9
    {0b000, 0b000, 0b000, 0b000, 0b010},  // .
    {0b000, 0b000, 0b111, 0b000, 0b000},  // -
    {0b000, 0b010, 0b000, 0b010, 0b000},  // :
};

const std::uint16_t* glyph_for(char ch) {
    if (ch >= '0' && ch <= '9') return kGlyphRows[ch - '0'];
    if (ch == '.') return kGlyphRows[10];
    if (ch == '-') return kGlyphRows[11];
    if (ch == ':') return kGlyphRows[12];
    return nullptr;  // anything else renders as space
}

}  // namespace

void draw_text(ImageU8& img, int y, int x, const std::string& text, int scale,
               const std::uint8_t rgb[3]) {
    int cx = x;
    for (char ch : text) {
        const std::uint16_t* rows = glyph_for(ch);
        if (rows) {
            for (int gy = 0; gy < 5; ++gy)
                for (int gx = 0; gx < 3; ++gx) {
                    if (!(rows[gy] >> (2 - gx) & 1)) continue;
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx) {
                            const int py = y + gy * scale + sy, px = cx + gx * scale + sx;
                            if (py < 0 || py >= img.h || px < 0 || px >= img.w) continue;
                            for (int c = 0; c < std::min(3, img.channels); ++c)
                                img.at(py, px, c) = rgb[c];
                        }
                }
        }
        cx += 4 * scale;  // 3 wide + 1 gap
    }
}

}  // namespace pareid
