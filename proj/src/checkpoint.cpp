#include "decode/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace decode {

namespace {

constexpr uint8_t kDtypeF64 = 1;
constexpr uint8_t kDtypeBytes = 2;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("load_checkpoint: " + path + " is truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("load_checkpoint: " + path + " is truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint_file(const std::string& path, const CheckpointData& data) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("DCKP", 4);
    put_u32(os, kCheckpointVersion);
    put_u64(os, data.tensors.size() + 1);  // +1 for the metadata entry
    auto write_name = [&](const std::string& name) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
    };
    write_name("meta");
    os.put(static_cast<char>(kDtypeBytes));
    os.put(1);
    put_u64(os, data.meta_json.size());
    os.write(data.meta_json.data(), static_cast<std::streamsize>(data.meta_json.size()));
    for (const auto& [name, t] : data.tensors) {
        write_name(name);
        os.put(static_cast<char>(kDtypeF64));
        os.put(static_cast<char>(t.ndim()));
        for (size_t e : t.shape) put_u64(os, e);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw std::runtime_error("load_checkpoint: " + path + " is truncated");
    if (std::memcmp(magic, "DCKP", 4) != 0)
        throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint");
    uint32_t version = get_u32(is, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: " + path + ": version mismatch (file has " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    uint64_t count = get_u64(is, path);
    CheckpointData data;
    bool have_meta = false;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t name_len = get_u32(is, path);
        if (name_len > (1u << 20))
            throw std::runtime_error("load_checkpoint: " + path + ": corrupt entry name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw std::runtime_error("load_checkpoint: " + path + " is truncated");
        int dtype = is.get();
        int ndim = is.get();
        if (dtype == EOF || ndim == EOF)
            throw std::runtime_error("load_checkpoint: " + path + " is truncated");
        if (dtype == kDtypeBytes) {
            uint64_t n = get_u64(is, path);
            std::string bytes(n, '\0');
            if (!is.read(bytes.data(), static_cast<std::streamsize>(n)))
                throw std::runtime_error("load_checkpoint: " + path + " is truncated");
            data.meta_json = std::move(bytes);
            have_meta = true;
        } else if (dtype == kDtypeF64) {
            std::vector<size_t> shape(ndim);
            uint64_t numel = 1;
            for (int k = 0; k < ndim; ++k) {
                uint64_t e = get_u64(is, path);
                if (e != 0 && numel > std::numeric_limits<uint64_t>::max() / std::max<uint64_t>(e, 1))
                    throw std::runtime_error("load_checkpoint: " + path + ": extent overflow");
                shape[k] = static_cast<size_t>(e);
                numel *= e;
            }
            Tensor t(shape);
            if (!is.read(reinterpret_cast<char*>(t.data.data()),
                         static_cast<std::streamsize>(numel * sizeof(double))))
                throw std::runtime_error("load_checkpoint: " + path + " is truncated");
            data.tensors.emplace_back(std::move(name), std::move(t));
        } else {
            throw std::runtime_error("load_checkpoint: " + path + ": unknown dtype code " +
                                     std::to_string(dtype));
        }
    }
    if (is.get() != EOF)
        throw std::runtime_error("load_checkpoint: " + path + " has trailing bytes");
    if (!have_meta)
        throw std::runtime_error("load_checkpoint: " + path + " is missing its metadata entry");
    return data;
}

}  // namespace decode
