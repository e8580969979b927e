#include "pagoda/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace pagoda {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'D', 'A'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

std::uint16_t get_u16(const std::string& s, std::size_t off) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off])) |
           (static_cast<std::uint16_t>(static_cast<unsigned char>(s[off + 1])) << 8);
}

std::uint64_t get_u64(const std::string& s, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

double get_f64(const std::string& s, std::size_t off) {
    std::uint64_t bits = get_u64(s, off);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

} // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write: " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string bytes_hash_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash_hex(const std::string& path) { return bytes_hash_hex(read_file(path)); }

const Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("checkpoint has no tensor: " + name);
    return it->second;
}

std::string encode_checkpoint(const ParamSet& params, const nlohmann::json& meta) {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    auto& entries = manifest["entries"];
    entries = nlohmann::json::array();

    std::string payload;
    auto emit = [&](const std::string& name, const Tensor& t, bool trainable) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["offset"] = payload.size();
        e["trainable"] = trainable;
        entries.push_back(e);
        for (double d : t.data) put_f64(payload, d);
    };
    for (const auto& p : params.entries()) {
        emit(p.name, p.var->value, p.trainable);
        if (p.ema) emit(p.name + ".ema", *p.ema, false);
    }

    std::string mjson = manifest.dump();
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_u64(out, mjson.size());
    out += mjson;
    out += payload;
    return out;
}

void save_checkpoint(const std::string& path, const ParamSet& params, const nlohmann::json& meta) {
    write_file_atomic(path, encode_checkpoint(params, meta));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 14 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("bad magic in checkpoint: " + path);
    if (get_u16(bytes, 4) != kVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    std::uint64_t mlen = get_u64(bytes, 6);
    if (14 + mlen > bytes.size()) throw std::runtime_error("truncated checkpoint manifest: " + path);
    nlohmann::json manifest = nlohmann::json::parse(bytes.substr(14, mlen));
    std::size_t payload_off = 14 + mlen;

    Checkpoint ck;
    ck.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest["entries"]) {
        std::string name = e["name"];
        std::vector<std::size_t> shape = e["shape"].get<std::vector<std::size_t>>();
        std::size_t off = e["offset"];
        std::size_t count = Tensor::count(shape);
        if (payload_off + off + 8 * count > bytes.size())
            throw std::runtime_error("truncated checkpoint payload at " + name + ": " + path);
        Tensor t(shape);
        for (std::size_t i = 0; i < count; ++i) t[i] = get_f64(bytes, payload_off + off + 8 * i);
        ck.tensors.emplace(name, std::move(t));
        ck.trainable[name] = e.value("trainable", true);
    }
    return ck;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::string out = "PGTS";
    put_u16(out, 1);
    std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((rank >> (8 * i)) & 0xff));
    for (auto d : t.shape) put_u64(out, d);
    for (double v : t.data) put_f64(out, v);
    write_file_atomic(path, out);
}

Tensor load_tensor(const std::string& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 10 || bytes.compare(0, 4, "PGTS") != 0)
        throw std::runtime_error("bad magic in tensor file: " + path);
    if (get_u16(bytes, 4) != 1) throw std::runtime_error("unsupported tensor file version: " + path);
    std::uint32_t rank = 0;
    for (int i = 0; i < 4; ++i)
        rank |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[6 + i])) << (8 * i);
    std::size_t off = 10;
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
        d = get_u64(bytes, off);
        off += 8;
    }
    std::size_t count = Tensor::count(shape);
    if (off + 8 * count > bytes.size()) throw std::runtime_error("truncated tensor file: " + path);
    Tensor t(shape);
    for (std::size_t i = 0; i < count; ++i) t[i] = get_f64(bytes, off + 8 * i);
    return t;
}

void restore_params(ParamSet& params, const Checkpoint& ck) {
    for (auto& p : params.entries()) {
        const Tensor& t = ck.at(p.name);
        if (!t.same_shape(p.var->value))
            throw std::runtime_error("checkpoint shape mismatch for " + p.name + ": have " +
                                     shape_str(p.var->value.shape) + ", file has " + shape_str(t.shape));
        p.var->value = t;
        auto it = ck.tensors.find(p.name + ".ema");
        if (it != ck.tensors.end()) p.ema = it->second;
        auto tr = ck.trainable.find(p.name);
        if (tr != ck.trainable.end()) p.trainable = tr->second;
    }
}

} // namespace pagoda
