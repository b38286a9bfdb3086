#include "eventness/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "eventness/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace eventness::ad {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw DataError("truncated checkpoint: " + path);
    }
    return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw DataError("truncated checkpoint: " + path);
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<const Parameter*>& params) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open checkpoint for writing: " + tmp);
        os.write(kMagic, 4);
        write_u32(os, kVersion);
        write_u64(os, config_json.size());
        os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
        write_u64(os, params.size());
        for (const Parameter* p : params) {
            write_u64(os, p->identifier.size());
            os.write(p->identifier.data(), static_cast<std::streamsize>(p->identifier.size()));
            write_u64(os, p->tensor.rank());
            for (std::size_t d : p->tensor.shape()) write_u64(os, d);
            os.write(reinterpret_cast<const char*>(p->tensor.data()),
                     static_cast<std::streamsize>(p->tensor.size() * sizeof(double)));
        }
        if (!os) throw DataError("checkpoint write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw DataError("cannot move checkpoint into place: " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("not a checkpoint file: " + path);
    }
    const std::uint32_t version = read_u32(is, path);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version in " + path);
    }
    Checkpoint ck;
    const std::uint64_t cfg_len = read_u64(is, path);
    ck.config_json.resize(cfg_len);
    if (cfg_len > 0 && !is.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len))) {
        throw DataError("truncated checkpoint: " + path);
    }
    const std::uint64_t n_params = read_u64(is, path);
    ck.params.reserve(n_params);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        const std::uint64_t name_len = read_u64(is, path);
        std::string name(name_len, '\0');
        if (name_len > 0 && !is.read(name.data(), static_cast<std::streamsize>(name_len))) {
            throw DataError("truncated checkpoint: " + path);
        }
        const std::uint64_t rank = read_u64(is, path);
        std::vector<std::size_t> shape(rank);
        for (std::uint64_t d = 0; d < rank; ++d) shape[d] = read_u64(is, path);
        Tensor t(shape);
        if (t.size() > 0 &&
            !is.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw DataError("truncated checkpoint: " + path);
        }
        ck.params.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

}  // namespace eventness::ad
