// SPDX-License-Identifier: Apache-2.0
#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "idfc/train.hpp"

namespace idfc {

namespace {

constexpr char kMagic[4] = {'I', 'D', 'F', 'C'};
constexpr uint32_t kVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<uint8_t>& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

// One serialized tensor record: name, shape, little-endian payload, CRC32
// of everything before the CRC. The checksum is what turns a silently
// flipped payload byte into a loadable, record-level error.
void put_record(std::vector<uint8_t>& out, const std::string& name,
                const std::vector<int>& shape, std::span<const double> payload) {
    std::vector<uint8_t> body;
    if (name.size() > 0xFFFF) raise(Error::Kind::InvalidArgument, "parameter name too long");
    put_u16(body, static_cast<uint16_t>(name.size()));
    body.insert(body.end(), name.begin(), name.end());
    body.push_back(static_cast<uint8_t>(shape.size()));
    for (int d : shape) put_u32(body, static_cast<uint32_t>(d));
    for (double v : payload) put_f64(body, v);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    out.insert(out.end(), body.begin(), body.end());
    put_u32(out, crc);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            raise(Error::Kind::Truncated, std::string("checkpoint truncated reading ") + what +
                                              " at byte offset " + std::to_string(pos));
        }
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

struct RawRecord {
    std::string name;
    std::vector<int> shape;
    std::vector<double> payload;
};

RawRecord read_record(Reader& r) {
    const size_t body_start = r.pos;
    RawRecord rec;
    const uint16_t name_len = r.u16("record name length");
    rec.name = r.bytes(name_len, "record name");
    r.need(1, "record rank");
    const uint8_t rank = r.buf[r.pos++];
    int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
        const uint32_t d = r.u32("record dim");
        if (d == 0 || d > (1u << 24)) {
            raise(Error::Kind::CorruptRecord, "record '" + rec.name + "': implausible dimension " +
                                                  std::to_string(d));
        }
        rec.shape.push_back(static_cast<int>(d));
        numel *= d;
    }
    rec.payload.resize(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) {
        rec.payload[static_cast<size_t>(i)] = std::bit_cast<double>(r.u64("record payload"));
    }
    const size_t body_len = r.pos - body_start;
    const uint32_t expect = static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(r.buf.data() + body_start), static_cast<uInt>(body_len)));
    const uint32_t stored = r.u32("record checksum");
    if (stored != expect) {
        raise(Error::Kind::CorruptRecord,
              "record '" + rec.name + "': checksum mismatch, payload corrupted");
    }
    return rec;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, ckpt.version);

    ParamGroup params = ckpt.model.all_params();
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& name : params.names()) {
        const Tensor& t = params.at(name);
        put_record(out, name, t.shape(), t.data());
    }
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& name : params.names()) {
        const Tensor& t = params.at(name);
        put_record(out, name, t.shape(), params.momentum(name));
    }
    put_u64(out, ckpt.iteration);
    put_u64(out, ckpt.rng_state);
    const std::string cfg = serialize_train_config(ckpt.config);
    put_u32(out, static_cast<uint32_t>(cfg.size()));
    out.insert(out.end(), cfg.begin(), cfg.end());

    std::ofstream f(path, std::ios::binary);
    if (!f) raise(Error::Kind::Io, "cannot write checkpoint " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) raise(Error::Kind::Io, "checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(Error::Kind::Io, "cannot open checkpoint " + path.string());
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};

    const std::string magic = r.bytes(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        raise(Error::Kind::BadMagic, "not a checkpoint file (bad magic): " + path.string());
    }
    const uint32_t version = r.u32("version");
    if (version != kVersion) {
        raise(Error::Kind::VersionMismatch,
              "unsupported checkpoint version " + std::to_string(version));
    }

    const uint32_t n_params = r.u32("parameter count");
    std::vector<RawRecord> param_records;
    param_records.reserve(n_params);
    for (uint32_t i = 0; i < n_params; ++i) param_records.push_back(read_record(r));

    const uint32_t n_momentum = r.u32("momentum count");
    std::vector<RawRecord> momentum_records;
    momentum_records.reserve(n_momentum);
    for (uint32_t i = 0; i < n_momentum; ++i) momentum_records.push_back(read_record(r));

    Checkpoint ckpt;
    ckpt.version = version;
    ckpt.iteration = r.u64("iteration counter");
    ckpt.rng_state = r.u64("rng state");
    const uint32_t cfg_len = r.u32("config length");
    const std::string cfg_text = r.bytes(cfg_len, "config");
    if (r.pos != buf.size()) {
        raise(Error::Kind::CorruptRecord, "trailing bytes after checkpoint payload");
    }
    ckpt.config = parse_train_config_text(cfg_text);

    ckpt.model = Model::init(ckpt.config.model, 0);
    ParamGroup params = ckpt.model.all_params();
    if (param_records.size() != params.size() || momentum_records.size() != params.size()) {
        raise(Error::Kind::CorruptRecord,
              "checkpoint parameter table does not match the model layout");
    }
    auto apply = [&params](const RawRecord& rec, bool is_momentum) {
        if (!params.contains(rec.name)) {
            raise(Error::Kind::CorruptRecord, "unexpected record '" + rec.name + "'");
        }
        Tensor& t = params.at(rec.name);
        if (t.shape() != rec.shape) {
            raise(Error::Kind::CorruptRecord, "record '" + rec.name + "': shape mismatch");
        }
        if (is_momentum) {
            params.momentum(rec.name) = rec.payload;
        } else {
            std::copy(rec.payload.begin(), rec.payload.end(), t.data().begin());
        }
    };
    for (const auto& rec : param_records) apply(rec, false);
    for (const auto& rec : momentum_records) apply(rec, true);
    return ckpt;
}

} // namespace idfc
