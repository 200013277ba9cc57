#include "gazefit/pgm_io.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "gazefit/error.hpp"

namespace gazefit {

void save_pgm(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write PGM file: " + path.string());
    }
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    std::string row(static_cast<size_t>(image.width), '\0');
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double value = image.at(x, y);
            const double clamped =
                value == Image::kBackground ? 0.0 : std::clamp(value, 0.0, 1.0);
            row[static_cast<size_t>(x)] =
                static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0)));
        }
        out.write(row.data(), image.width);
    }
    if (!out) {
        throw IoError("failed while writing PGM file: " + path.string());
    }
}

namespace {

int read_pgm_token(std::istream& in, const std::filesystem::path& path) {
    // Skips whitespace and '#' comment lines between header tokens.
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            while (c != EOF && c != '\n') {
                c = in.get();
            }
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) {
        throw ParseError("PGM header of " + path.string() + " is malformed");
    }
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

} // namespace

Image load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open PGM file: " + path.string());
    }
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5') {
        throw ParseError("PGM file " + path.string() + " is not binary P5");
    }
    const int width = read_pgm_token(in, path);
    const int height = read_pgm_token(in, path);
    const int maxval = read_pgm_token(in, path);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        throw ParseError("PGM file " + path.string() + " has an unsupported header");
    }
    Image image(width, height);
    std::string row(static_cast<size_t>(width), '\0');
    for (int y = 0; y < height; ++y) {
        in.read(row.data(), width);
        if (!in) {
            throw ParseError("PGM file " + path.string() + " is truncated");
        }
        for (int x = 0; x < width; ++x) {
            image.at(x, y) =
                static_cast<double>(static_cast<unsigned char>(row[static_cast<size_t>(x)])) /
                static_cast<double>(maxval);
        }
    }
    return image;
}

} // namespace gazefit
