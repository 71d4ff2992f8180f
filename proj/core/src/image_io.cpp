#include "spritediff/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "spritediff/errors.hpp"

namespace spritediff {

namespace {

uint8_t to_byte(double v) {
    double x = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
    return static_cast<uint8_t>(std::lround(x));
}

double from_byte(uint8_t b) { return static_cast<double>(b) / 255.0 * 2.0 - 1.0; }

void read_header(std::ifstream& f, const std::string& path, const char* magic, int& w, int& h) {
    std::string m;
    f >> m;
    if (m != magic) throw IoError("'" + path + "': expected " + magic + " header");
    int maxval = 0;
    f >> w >> h >> maxval;
    if (!f || w <= 0 || h <= 0 || maxval != 255)
        throw IoError("'" + path + "': unsupported header");
    f.get();  // single whitespace before binary data
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.shape()[0] != 3)
        throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(img.shape()));
    int H = img.shape()[1], W = img.shape()[2];
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "P6\n" << W << " " << H << "\n255\n";
    const auto& d = img.data();
    std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                row[x * 3 + c] = to_byte(d[(c * H + y) * W + x]);
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    int W = 0, H = 0;
    read_header(f, path, "P6", W, H);
    std::vector<uint8_t> bytes(static_cast<size_t>(W) * H * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("'" + path + "': truncated pixel data");
    std::vector<double> d(bytes.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                d[(static_cast<int64_t>(c) * H + y) * W + x] = from_byte(bytes[(y * W + x) * 3 + c]);
    return Tensor::from_data({3, H, W}, std::move(d));
}

void write_pgm(const std::string& path, const Tensor& mask) {
    if (mask.rank() != 3 || mask.shape()[0] != 1)
        throw ShapeError("write_pgm: expected [1,H,W], got " + shape_str(mask.shape()));
    int H = mask.shape()[1], W = mask.shape()[2];
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "P5\n" << W << " " << H << "\n255\n";
    const auto& d = mask.data();
    std::vector<uint8_t> row(W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) row[x] = d[y * W + x] >= 0.5 ? 255 : 0;
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    int W = 0, H = 0;
    read_header(f, path, "P5", W, H);
    std::vector<uint8_t> bytes(static_cast<size_t>(W) * H);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("'" + path + "': truncated pixel data");
    std::vector<double> d(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) d[i] = bytes[i] >= 128 ? 1.0 : 0.0;
    return Tensor::from_data({1, H, W}, std::move(d));
}

}  // namespace spritediff
