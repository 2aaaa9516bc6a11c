// SPDX-License-Identifier: Apache-2.0
#include "idfc/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace idfc {

namespace {

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& what) {
    raise(Error::Kind::Io, path.string() + ": " + what);
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, const std::string& what,
                             std::streamoff offset) {
    raise(Error::Kind::Parse,
          path.string() + ": " + what + " (byte offset " + std::to_string(offset) + ")");
}

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

int parse_int(std::istream& in, const std::filesystem::path& path, const char* what) {
    const std::string tok = next_token(in);
    try {
        size_t pos = 0;
        const int v = std::stoi(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        parse_fail(path, std::string("bad ") + what + " field '" + tok + "'", in.tellg());
    }
}

bool host_is_little_endian() { return std::endian::native == std::endian::little; }

} // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3) {
        raise(Error::Kind::ShapeMismatch, "write_ppm expects a 1x3xHxW tensor");
    }
    const int h = rgb.dim(2), w = rgb.dim(3);
    std::ofstream out(path, std::ios::binary);
    if (!out) io_fail(path, "cannot open for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int c = 0; c < 3; ++c) {
                double v = rgb.at(0, c, i, j);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                row[static_cast<size_t>(j) * 3 + static_cast<size_t>(c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) io_fail(path, "write failed");
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open");
    const std::string magic = next_token(in);
    if (magic != "P6") parse_fail(path, "expected P6 magic, got '" + magic + "'", in.tellg());
    const int w = parse_int(in, path, "width");
    const int h = parse_int(in, path, "height");
    const int maxval = parse_int(in, path, "maxval");
    if (maxval != 255) parse_fail(path, "unsupported maxval " + std::to_string(maxval), in.tellg());
    // Exactly one whitespace byte separates the header from the payload;
    // next_token has already consumed it.
    std::vector<unsigned char> payload(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<size_t>(in.gcount()) != payload.size()) {
        raise(Error::Kind::Truncated, path.string() + ": payload truncated after " +
                                          std::to_string(in.gcount()) + " payload bytes");
    }
    Tensor rgb = Tensor::zeros({1, 3, h, w});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int c = 0; c < 3; ++c) {
                rgb.at(0, c, i, j) =
                    payload[(static_cast<size_t>(i) * w + j) * 3 + static_cast<size_t>(c)] / 255.0;
            }
        }
    }
    return rgb;
}

void write_pfm(const std::filesystem::path& path, const Tensor& depth) {
    if (depth.rank() != 4 || depth.dim(0) != 1 || depth.dim(1) != 1) {
        raise(Error::Kind::ShapeMismatch, "write_pfm expects a 1x1xHxW tensor");
    }
    const int h = depth.dim(2), w = depth.dim(3);
    std::ofstream out(path, std::ios::binary);
    if (!out) io_fail(path, "cannot open for writing");
    out << "Pf\n" << w << " " << h << "\n-1.0\n";
    std::vector<float> row(static_cast<size_t>(w));
    for (int i = h - 1; i >= 0; --i) { // bottom-to-top
        for (int j = 0; j < w; ++j) row[static_cast<size_t>(j)] = static_cast<float>(depth.at(0, 0, i, j));
        if (!host_is_little_endian()) {
            for (float& f : row) {
                uint32_t u = std::bit_cast<uint32_t>(f);
                u = __builtin_bswap32(u);
                f = std::bit_cast<float>(u);
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) io_fail(path, "write failed");
}

Tensor read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open");
    const std::string magic = next_token(in);
    if (magic == "PF") parse_fail(path, "three-channel PFM is not supported", in.tellg());
    if (magic != "Pf") parse_fail(path, "expected Pf magic, got '" + magic + "'", in.tellg());
    const int w = parse_int(in, path, "width");
    const int h = parse_int(in, path, "height");
    const std::string scale_tok = next_token(in);
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        parse_fail(path, "bad scale field '" + scale_tok + "'", in.tellg());
    }
    if (scale == 0.0) parse_fail(path, "scale must be nonzero", in.tellg());
    const bool file_little = scale < 0.0;

    std::vector<float> payload(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != payload.size() * sizeof(float)) {
        raise(Error::Kind::Truncated,
              path.string() + ": payload truncated after " + std::to_string(in.gcount()) +
                  " payload bytes");
    }
    const bool swap = file_little != host_is_little_endian();
    Tensor depth = Tensor::zeros({1, 1, h, w});
    for (int i = 0; i < h; ++i) {
        const int src_row = h - 1 - i; // stored bottom-to-top
        for (int j = 0; j < w; ++j) {
            float f = payload[static_cast<size_t>(src_row) * w + j];
            if (swap) {
                uint32_t u = std::bit_cast<uint32_t>(f);
                u = __builtin_bswap32(u);
                f = std::bit_cast<float>(u);
            }
            depth.at(0, 0, i, j) = static_cast<double>(f);
        }
    }
    return depth;
}

std::pair<int, int> ppm_dims(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open");
    const std::string magic = next_token(in);
    if (magic != "P6") parse_fail(path, "expected P6 magic", in.tellg());
    const int w = parse_int(in, path, "width");
    const int h = parse_int(in, path, "height");
    return {h, w};
}

std::pair<int, int> pfm_dims(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open");
    const std::string magic = next_token(in);
    if (magic != "Pf") parse_fail(path, "expected Pf magic", in.tellg());
    const int w = parse_int(in, path, "width");
    const int h = parse_int(in, path, "height");
    return {h, w};
}

} // namespace idfc
