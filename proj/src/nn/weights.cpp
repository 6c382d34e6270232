#include "perceptlab/nn/weights.hpp"

#include <cstring>
#include <fstream>

namespace perceptlab::nn {

namespace {

constexpr char kMagic[4] = {'P', 'L', 'W', 'T'};
constexpr uint32_t kVersion = 1;

void wr_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t rd_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw IoError("truncated weight file: " + path);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint32_t f32_bits(float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

float bits_f32(uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

void hash_bytes(uint64_t& h, const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
}

void hash_u32(uint64_t& h, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    hash_bytes(h, b, 4);
}

} // namespace

void WeightFile::put(const std::string& name, const Tensor& t) {
    if (name.empty()) throw DomainError("weight entry needs a name");
    Entry e;
    e.shape = t.shape();
    e.data.resize(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i)
        e.data[static_cast<size_t>(i)] = static_cast<float>(t[i]);
    entries_[name] = std::move(e);
}

void WeightFile::put_scalar(const std::string& name, double v) {
    Tensor t({1});
    t[0] = v;
    put(name, t);
}

Tensor WeightFile::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("weight entry missing: " + name);
    Tensor t(it->second.shape);
    for (size_t i = 0; i < it->second.data.size(); ++i)
        t[static_cast<int64_t>(i)] = static_cast<double>(it->second.data[i]);
    return t;
}

double WeightFile::get_scalar(const std::string& name) const {
    Tensor t = get(name);
    if (t.numel() != 1) throw IoError("weight entry not scalar: " + name);
    return t[0];
}

std::vector<std::string> WeightFile::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

uint64_t WeightFile::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, e] : entries_) {
        hash_bytes(h, name.data(), name.size());
        hash_u32(h, static_cast<uint32_t>(e.shape.size()));
        for (int d : e.shape) hash_u32(h, static_cast<uint32_t>(d));
        for (float f : e.data) hash_u32(h, f32_bits(f));
    }
    return h;
}

WeightFile WeightFile::with_prefix_stripped(const std::string& prefix) const {
    WeightFile out;
    for (const auto& [name, e] : entries_)
        if (name.size() > prefix.size() && name.compare(0, prefix.size(), prefix) == 0)
            out.entries_[name.substr(prefix.size())] = e;
    if (out.entries_.empty())
        throw IoError("no weight entries under prefix '" + prefix + "'");
    return out;
}

void WeightFile::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    wr_u32(os, kVersion);
    wr_u32(os, static_cast<uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
        wr_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        wr_u32(os, static_cast<uint32_t>(e.shape.size()));
        for (int d : e.shape) wr_u32(os, static_cast<uint32_t>(d));
        for (float f : e.data) wr_u32(os, f32_bits(f));
    }
    if (!os) throw IoError("write failed: " + path);
}

WeightFile WeightFile::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open weight file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a weight file: " + path);
    const uint32_t version = rd_u32(is, path);
    if (version != kVersion)
        throw IoError("unsupported weight file version " + std::to_string(version) +
                      ": " + path);
    const uint32_t count = rd_u32(is, path);
    WeightFile out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = rd_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw IoError("truncated weight file: " + path);
        const uint32_t ndim = rd_u32(is, path);
        Entry e;
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            const int dim = static_cast<int>(rd_u32(is, path));
            if (dim <= 0) throw IoError("bad dimension in weight file: " + path);
            e.shape.push_back(dim);
            numel *= dim;
        }
        if (ndim == 0) numel = 0;
        e.data.resize(static_cast<size_t>(numel));
        for (int64_t j = 0; j < numel; ++j)
            e.data[static_cast<size_t>(j)] = bits_f32(rd_u32(is, path));
        if (out.entries_.count(name))
            throw IoError("duplicate weight entry '" + name + "': " + path);
        out.entries_[name] = std::move(e);
    }
    return out;
}

void f32_snap(Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = f32_round(t[i]);
}

} // namespace perceptlab::nn
