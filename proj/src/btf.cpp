#include "decode/btf.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace decode {

namespace {

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
}

uint64_t get_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("read_btf: " + path + " is truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

static_assert(std::numeric_limits<float>::is_iec559 && std::numeric_limits<double>::is_iec559,
              "IEEE-754 layout required for the on-disk format");

}  // namespace

void write_btf(const std::string& path, const Tensor& t, uint8_t dtype) {
    if (dtype != kBtfF32 && dtype != kBtfF64)
        throw std::invalid_argument("write_btf: unknown dtype code " + std::to_string(dtype));
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_btf: cannot open " + path);
    os.write("BTF1", 4);
    uint8_t nd = static_cast<uint8_t>(t.ndim());
    os.put(static_cast<char>(dtype));
    os.put(static_cast<char>(nd));
    for (size_t e : t.shape) put_u64(os, e);
    if (dtype == kBtfF64) {
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    } else {
        std::vector<float> f(t.data.begin(), t.data.end());
        os.write(reinterpret_cast<const char*>(f.data()),
                 static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write_btf: write failed for " + path);
}

Tensor read_btf(const std::string& path, uint8_t* dtype_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_btf: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw std::runtime_error("read_btf: " + path + " is truncated");
    if (std::memcmp(magic, "BTF1", 4) != 0) {
        if (std::memcmp(magic, "BTF", 3) == 0)
            throw std::runtime_error("read_btf: " + path + ": unsupported version '" +
                                     std::string(magic, 4) + "'");
        throw std::runtime_error("read_btf: " + path + " is not a BTF tensor file");
    }
    int dtype = is.get();
    int ndim = is.get();
    if (dtype == EOF || ndim == EOF) throw std::runtime_error("read_btf: " + path + " is truncated");
    if (dtype != kBtfF32 && dtype != kBtfF64)
        throw std::runtime_error("read_btf: " + path + ": unknown dtype code " +
                                 std::to_string(dtype));
    std::vector<size_t> shape(ndim);
    uint64_t numel = 1;
    for (int i = 0; i < ndim; ++i) {
        uint64_t e = get_u64(is, path);
        if (e != 0 && numel > std::numeric_limits<uint64_t>::max() / std::max<uint64_t>(e, 1))
            throw std::runtime_error("read_btf: " + path + ": extent overflow");
        shape[i] = static_cast<size_t>(e);
        numel *= e;
    }
    const size_t elem = dtype == kBtfF64 ? sizeof(double) : sizeof(float);
    if (numel > (size_t{1} << 40) / elem)
        throw std::runtime_error("read_btf: " + path + ": extent overflow");
    Tensor t(shape);
    if (dtype == kBtfF64) {
        if (!is.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(numel * sizeof(double))))
            throw std::runtime_error("read_btf: " + path + " is truncated");
    } else {
        std::vector<float> f(numel);
        if (!is.read(reinterpret_cast<char*>(f.data()),
                     static_cast<std::streamsize>(numel * sizeof(float))))
            throw std::runtime_error("read_btf: " + path + " is truncated");
        for (size_t i = 0; i < numel; ++i) t.data[i] = f[i];
    }
    if (is.get() != EOF)
        throw std::runtime_error("read_btf: " + path + " has trailing bytes");
    if (dtype_out) *dtype_out = static_cast<uint8_t>(dtype);
    return t;
}

}  // namespace decode
