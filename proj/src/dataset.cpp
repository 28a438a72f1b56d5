#include "pareid/dataset.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pareid/image_io.hpp"

namespace fs = std::filesystem;

namespace pareid {

namespace {

static_assert(sizeof(float) == 4, "float must be 32-bit");

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    std::uint32_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 4))
        throw std::runtime_error("fragment container truncated: " + path);
    return v;
}

std::string rect_list(const std::vector<PixelRect>& rects) {
    std::string out;
    for (std::size_t i = 0; i < rects.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(rects[i].y0) + ',' + std::to_string(rects[i].x0) + ',' +
               std::to_string(rects[i].y1) + ',' + std::to_string(rects[i].x1);
    }
    return out.empty() ? "-" : out;
}

std::vector<PixelRect> parse_rect_list(const std::string& field, const std::string& where) {
    std::vector<PixelRect> rects;
    if (field == "-" || field.empty()) return rects;
    std::stringstream ss(field);
    std::string item;
    while (std::getline(ss, item, ';')) {
        PixelRect r;
        if (std::sscanf(item.c_str(), "%d,%d,%d,%d", &r.y0, &r.x0, &r.y1, &r.x1) != 4)
            throw std::runtime_error("malformed rectangle '" + item + "' in " + where);
        rects.push_back(r);
    }
    return rects;
}

}  // namespace

void write_fragment_container(const std::string& path, const PlaneStack& planes,
                              const std::vector<float>& confidence) {
    if (int(confidence.size()) != planes.planes)
        throw std::invalid_argument("fragment container: " + std::to_string(confidence.size()) +
                                    " confidences for " + std::to_string(planes.planes) + " planes");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write("FRAG", 4);
    write_u32(f, 1);
    write_u32(f, std::uint32_t(planes.planes));
    write_u32(f, std::uint32_t(planes.rows));
    write_u32(f, std::uint32_t(planes.cols));
    f.write(reinterpret_cast<const char*>(confidence.data()),
            std::streamsize(confidence.size() * 4));
    f.write(reinterpret_cast<const char*>(planes.data.data()),
            std::streamsize(planes.data.size() * 4));
    if (!f) throw std::runtime_error("write failed: " + path);
}

PlaneStack read_fragment_container(const std::string& path, std::vector<float>* confidence_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open fragment container: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "FRAG", 4) != 0)
        throw std::runtime_error("not a fragment container: " + path);
    const std::uint32_t version = read_u32(f, path);
    if (version != 1)
        throw std::runtime_error("unsupported fragment container version " +
                                 std::to_string(version) + ": " + path);
    const std::uint32_t planes = read_u32(f, path);
    const std::uint32_t rows = read_u32(f, path);
    const std::uint32_t cols = read_u32(f, path);
    if (planes == 0 || planes > 4096 || rows == 0 || rows > 65536 || cols == 0 || cols > 65536)
        throw std::runtime_error("implausible fragment container dimensions: " + path);
    std::vector<float> conf(planes);
    if (!f.read(reinterpret_cast<char*>(conf.data()), std::streamsize(planes * 4)))
        throw std::runtime_error("fragment container truncated: " + path);
    PlaneStack st{int(planes), int(rows), int(cols)};
    if (!f.read(reinterpret_cast<char*>(st.data.data()), std::streamsize(st.data.size() * 4)))
        throw std::runtime_error("fragment container truncated: " + path);
    if (confidence_out) *confidence_out = std::move(conf);
    return st;
}

PlaneStack planes_from_images(const std::vector<std::string>& paths) {
    if (paths.empty()) throw std::invalid_argument("planes_from_images: no paths");
    PlaneStack st;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        const std::string& p = paths[i];
        ImageU8 img = p.size() > 4 && p.substr(p.size() - 4) == ".pgm" ? read_pgm(p) : read_png(p);
        if (i == 0) {
            st = PlaneStack(int(paths.size()), img.h, img.w);
        } else if (img.h != st.rows || img.w != st.cols) {
            throw std::runtime_error("fragment image size mismatch: " + p);
        }
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                st.at(int(i), y, x) = float(img.at(y, x, 0)) / 255.0f;
    }
    return st;
}

void write_split(const std::string& split_dir, const std::vector<SynthSample>& samples) {
    fs::create_directories(split_dir);
    std::ofstream man(split_dir + "/manifest.tsv");
    if (!man) throw std::runtime_error("cannot open for write: " + split_dir + "/manifest.tsv");
    man << "# pareid manifest v1\n";
    char name[32];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SynthSample& s = samples[i];
        std::snprintf(name, sizeof(name), "%06zu", i);
        const std::string img_name = std::string(name) + ".png";
        const std::string frag_name = std::string(name) + ".frag";
        write_png(split_dir + "/" + img_name, from_chw(s.image, s.h, s.w));
        write_fragment_container(split_dir + "/" + frag_name, s.fragments, s.confidence);
        man << img_name << '\t' << frag_name << '\t' << s.id << '\t' << s.camera << '\t' << s.label
            << '\t' << rect_list(s.band_rects) << '\n';
    }
    if (!man) throw std::runtime_error("write failed: " + split_dir + "/manifest.tsv");
}

std::vector<SynthSample> load_split(const std::string& split_dir) {
    const std::string man_path = split_dir + "/manifest.tsv";
    std::ifstream man(man_path);
    if (!man) throw std::runtime_error("cannot open manifest: " + man_path);
    std::vector<SynthSample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(man, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string img_name, frag_name, id_s, cam_s, label_s, bands_s;
        if (!std::getline(ss, img_name, '\t') || !std::getline(ss, frag_name, '\t') ||
            !std::getline(ss, id_s, '\t') || !std::getline(ss, cam_s, '\t') ||
            !std::getline(ss, label_s, '\t') || !std::getline(ss, bands_s))
            throw std::runtime_error("malformed manifest line " + std::to_string(line_no) + " in " +
                                     man_path);
        SynthSample s;
        const ImageU8 img = read_png(split_dir + "/" + img_name);
        s.h = img.h;
        s.w = img.w;
        s.image = to_chw(img);
        s.fragments = read_fragment_container(split_dir + "/" + frag_name, &s.confidence);
        try {
            s.id = std::stoi(id_s);
            s.camera = std::stoi(cam_s);
            s.label = std::stoi(label_s);
        } catch (const std::exception&) {
            throw std::runtime_error("malformed manifest numbers at line " +
                                     std::to_string(line_no) + " in " + man_path);
        }
        s.band_rects = parse_rect_list(bands_s, man_path + ":" + std::to_string(line_no));
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_dataset(const std::string& root, const SynthDataset& ds) {
    fs::create_directories(root);
    write_split(root + "/train", ds.train);
    write_split(root + "/query", ds.query);
    write_split(root + "/gallery", ds.gallery);
    write_split(root + "/query_clean", ds.query_clean);
    write_split(root + "/gallery_clean", ds.gallery_clean);
}

SynthDataset load_external(const std::string& root) {
    SynthDataset ds;
    bool any = false;
    auto maybe = [&](const char* name, std::vector<SynthSample>& out) {
        if (fs::exists(root + "/" + name + "/manifest.tsv")) {
            out = load_split(root + "/" + name);
            any = true;
        }
    };
    maybe("train", ds.train);
    maybe("query", ds.query);
    maybe("gallery", ds.gallery);
    maybe("query_clean", ds.query_clean);
    maybe("gallery_clean", ds.gallery_clean);
    if (!any) throw std::runtime_error("no dataset splits found under: " + root);
    const SynthSample* first = !ds.train.empty()   ? &ds.train.front()
                               : !ds.query.empty() ? &ds.query.front()
                                                   : ds.gallery.empty() ? nullptr : &ds.gallery.front();
    if (first) {
        ds.spec.image_h = first->h;
        ds.spec.image_w = first->w;
        ds.spec.bands = int(first->band_rects.size());
    }
    return ds;
}

}  // namespace pareid
