#include "tg3d/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace tg3d {

static constexpr char kMagic[8] = {'T', 'G', '3', 'D', 'C', 'K', 'P', 'T'};
static constexpr uint32_t kVersion = 1;

void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "save_checkpoint: cannot open " + path);
    f.write(kMagic, 8);
    uint32_t ver = kVersion;
    uint32_t n = static_cast<uint32_t>(params.size());
    f.write(reinterpret_cast<const char*>(&ver), 4);
    f.write(reinterpret_cast<const char*>(&n), 4);
    for (const auto& p : params) {
        uint32_t len = static_cast<uint32_t>(p.name.size());
        uint64_t count = static_cast<uint64_t>(p.size);
        f.write(reinterpret_cast<const char*>(&len), 4);
        f.write(p.name.data(), len);
        f.write(reinterpret_cast<const char*>(&count), 8);
        f.write(reinterpret_cast<const char*>(p.data), static_cast<std::streamsize>(count * 8));
    }
    check(f.good(), "save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, const ParamSet& params) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    check(f.good() && std::memcmp(magic, kMagic, 8) == 0,
          "load_checkpoint: bad magic in " + path);
    uint32_t ver = 0, n = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    check(ver == kVersion, "load_checkpoint: unsupported version " + std::to_string(ver));
    f.read(reinterpret_cast<char*>(&n), 4);
    std::map<std::string, std::vector<double>> blobs;
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 4);
        std::string name(len, '\0');
        f.read(name.data(), len);
        uint64_t count = 0;
        f.read(reinterpret_cast<char*>(&count), 8);
        std::vector<double> data(count);
        f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 8));
        check(f.good(), "load_checkpoint: truncated file " + path);
        blobs.emplace(std::move(name), std::move(data));
    }
    for (const auto& p : params) {
        auto it = blobs.find(p.name);
        check(it != blobs.end(), "load_checkpoint: missing blob " + p.name);
        check(static_cast<long>(it->second.size()) == p.size,
              "load_checkpoint: size mismatch for " + p.name);
        std::memcpy(p.data, it->second.data(), static_cast<size_t>(p.size) * 8);
    }
}

uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "file_hash: cannot open " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        h = fnv1a(buf, static_cast<size_t>(f.gcount()), h);
    return h;
}

} // namespace tg3d
