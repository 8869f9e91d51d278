#include "coam/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace coam {

static const char kMagic[8] = {'C', 'O', 'A', 'M', 'C', 'K', 'P', 'T'};
static constexpr std::uint32_t kVersion = 1;

template <typename T>
static void write_le(std::ostream& os, T v) {
    // Host is little-endian on every supported target.
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
static T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    write_le<std::uint32_t>(os, kVersion);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw std::runtime_error("save_checkpoint: name too long");
        write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
        for (int d : t.shape) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (double v : t.data) write_le<float>(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint32_t version = read_le<std::uint32_t>(is);
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    std::uint32_t count = read_le<std::uint32_t>(is);
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t nlen = read_le<std::uint16_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        std::uint8_t rank = read_le<std::uint8_t>(is);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(read_le<std::uint32_t>(is));
        Tensor t(shape);
        for (double& v : t.data) v = static_cast<double>(read_le<float>(is));
        if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace coam
