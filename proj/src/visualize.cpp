#include "pareid/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace pareid {

namespace {

// Nearest-neighbor stretch of one grid plane onto the image resolution.
void paint_map(ImageU8& panel, int oy, int ox, const float* row, int rows, int cols, int h, int w,
               float row_max) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int r = std::min(rows - 1, y * rows / h);
            const int c = std::min(cols - 1, x * cols / w);
            const float v = row[r * cols + c];
            std::uint8_t rgb[3];
            colormap_cold_hot(row_max > 0 ? v / row_max : 0.0f, rgb);
            for (int ch = 0; ch < 3; ++ch) panel.at(oy + y, ox + x, ch) = rgb[ch];
        }
}

}  // namespace

ImageU8 render_panel(const PAModel<float>& model, const SynthSample& s, int upscale) {
    const ModelOutput<float> out = model.forward(s.image, s.camera);
    const Tensor<float> avg = averaged_attention(out);
    const int P = avg.dim(0);
    const int rows = model.cfg.n_rows(), cols = model.cfg.n_cols();
    const int h = s.h, w = s.w;
    const int gap = 2, strip = 9;  // text strip under each tile
    const int tiles = 1 + P;
    ImageU8 panel(h + strip, tiles * w + (tiles + 1) * gap, 3, 24);

    // input image tile
    const ImageU8 input = from_chw(s.image, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) panel.at(y, gap + x, c) = input.at(y, x, c);

    const std::vector<float>& a = avg.data();
    const std::vector<float>& vis = out.visibility.data();
    for (int p = 0; p < P; ++p) {
        const float* row = a.data() + std::size_t(p) * rows * cols;
        const float row_max = *std::max_element(row, row + rows * cols);
        const int ox = gap + (p + 1) * (w + gap);
        paint_map(panel, 0, ox, row, rows, cols, h, w, row_max);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.2f", double(vis[p]));
        const std::uint8_t green[3] = {80, 220, 80}, red[3] = {235, 70, 70};
        draw_text(panel, h + 2, ox + 1, buf, 1, vis[p] < 0.5f ? red : green);
    }
    return upscale > 1 ? upscale_nearest(panel, upscale) : panel;
}

double attention_peak_ratio(const PAModel<float>& model, const SynthSample& s) {
    const ModelOutput<float> out = model.forward(s.image, s.camera);
    const Tensor<float> avg = averaged_attention(out);
    const int P = avg.dim(0), N = avg.dim(1);
    const std::vector<float>& a = avg.data();
    double acc = 0.0;
    for (int p = 0; p < P; ++p) {
        const float* row = a.data() + std::size_t(p) * N;
        const auto [mn, mx] = std::minmax_element(row, row + N);
        acc += double(*mx) / std::max(1e-12, double(*mn));
    }
    return acc / double(P);
}

void write_visualizations(const PAModel<float>& model, const std::vector<SynthSample>& samples,
                          const std::vector<int>& indices, const std::string& dir, int upscale,
                          bool pgm) {
    std::filesystem::create_directories(dir);
    for (int idx : indices) {
        if (idx < 0 || idx >= int(samples.size()))
            throw std::invalid_argument("visualize: sample index " + std::to_string(idx) +
                                        " outside split of " + std::to_string(samples.size()));
        const ImageU8 panel = render_panel(model, samples[idx], upscale);
        char name[48];
        std::snprintf(name, sizeof(name), "sample_%04d", idx);
        if (pgm) {
            ImageU8 gray(panel.h, panel.w, 1);
            for (int y = 0; y < panel.h; ++y)
                for (int x = 0; x < panel.w; ++x)
                    gray.at(y, x, 0) = std::uint8_t(
                        std::lround(0.299 * panel.at(y, x, 0) + 0.587 * panel.at(y, x, 1) +
                                    0.114 * panel.at(y, x, 2)));
            write_pgm(dir + "/" + name + ".pgm", gray);
        } else {
            write_png(dir + "/" + name + ".png", panel);
        }
    }
}

}  // namespace pareid
