#include "pareid/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace pareid {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

constexpr char kMagic[4] = {'P', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<StoredTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, std::uint32_t(tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        if (shape_numel(t.shape) != t.data.size())
            throw std::logic_error("checkpoint: tensor '" + t.name + "' shape " + shape_str(t.shape) +
                                   " does not match buffer of " + std::to_string(t.data.size()));
        put<std::uint32_t>(os, std::uint32_t(t.name.size()));
        os.write(t.name.data(), std::streamsize(t.name.size()));
        put<std::uint32_t>(os, std::uint32_t(t.shape.size()));
        for (int d : t.shape) put<std::int32_t>(os, d);
        put<std::uint64_t>(os, offset);
        offset += std::uint64_t(t.data.size()) * sizeof(float);
    }
    put<std::uint64_t>(os, offset);
    for (const auto& t : tensors)
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 std::streamsize(t.data.size() * sizeof(float)));
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::vector<StoredTensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
    const auto version = get<std::uint32_t>(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto count = get<std::uint32_t>(is);
    std::vector<StoredTensor> out(count);
    std::vector<std::uint64_t> offsets(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(is);
        out[i].name.resize(name_len);
        is.read(out[i].name.data(), name_len);
        const auto ndim = get<std::uint32_t>(is);
        out[i].shape.resize(ndim);
        for (auto& d : out[i].shape) d = get<std::int32_t>(is);
        offsets[i] = get<std::uint64_t>(is);
    }
    const auto region = get<std::uint64_t>(is);
    const std::istream::pos_type data_start = is.tellg();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t n = shape_numel(out[i].shape);
        if (offsets[i] + n * sizeof(float) > region)
            throw std::runtime_error("checkpoint: tensor '" + out[i].name + "' overruns data region");
        out[i].data.resize(n);
        is.seekg(data_start + std::istream::pos_type(offsets[i]));
        is.read(reinterpret_cast<char*>(out[i].data.data()), std::streamsize(n * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated data for '" + out[i].name + "'");
    }
    return out;
}

const StoredTensor* find_tensor(const std::vector<StoredTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void restore_params(const std::vector<StoredTensor>& loaded,
                    std::vector<std::pair<std::string, Tensor<float>>>& params) {
    std::string problems;
    for (auto& [name, p] : params) {
        const StoredTensor* t = find_tensor(loaded, name);
        if (!t) {
            problems += (problems.empty() ? "" : ", ") + ("missing " + name);
            continue;
        }
        if (t->shape != p.shape()) {
            problems += (problems.empty() ? "" : ", ") +
                        (name + " has " + shape_str(t->shape) + ", expected " + shape_str(p.shape()));
            continue;
        }
        p.data() = t->data;
    }
    if (!problems.empty()) throw std::runtime_error("checkpoint restore: " + problems);
}

}  // namespace pareid
