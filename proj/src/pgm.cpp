#include "coordatt/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace coordatt {

namespace {

// Next whitespace-separated token, skipping '#' comment lines.
int next_value(std::istream& in, const std::string& path) {
    for (;;) {
        int c = in.peek();
        if (c == EOF) throw std::runtime_error("image: truncated header in " + path);
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        break;
    }
    int v = 0;
    if (!(in >> v)) throw std::runtime_error("image: malformed header in " + path);
    return v;
}

} // namespace

Tensor read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("image: cannot open " + path);
    char p = 0, kind = 0;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
        throw std::runtime_error("image: " + path + " is not a P2/P3/P5/P6 netpbm file");
    const bool color = kind == '3' || kind == '6';
    const bool binary = kind == '5' || kind == '6';
    const int w = next_value(in, path);
    const int h = next_value(in, path);
    const int maxval = next_value(in, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
        throw std::runtime_error("image: unsupported dimensions or maxval in " + path);
    const int channels = color ? 3 : 1;
    Tensor out = Tensor::zeros({1, channels, h, w});
    const std::size_t count = static_cast<std::size_t>(channels) * h * w;
    if (binary) {
        in.get();   // single whitespace after maxval
        std::vector<unsigned char> raw(count);
        if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count)))
            throw std::runtime_error("image: truncated pixel data in " + path);
        std::size_t k = 0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int c = 0; c < channels; ++c)
                    out.at(0, c, i, j) = static_cast<double>(raw[k++]) / maxval;
    } else {
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int c = 0; c < channels; ++c) {
                    int v = 0;
                    if (!(in >> v))
                        throw std::runtime_error("image: truncated pixel data in " + path);
                    out.at(0, c, i, j) = static_cast<double>(v) / maxval;
                }
    }
    return out;
}

void write_pgm(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("write_pgm: expected a rank-2 [H,W] map");
    const int h = map.extent(0), w = map.extent(1);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("image: cannot open " + path + " for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double v = std::clamp(map.at(i, j), 0.0, 1.0);
            out.put(static_cast<char>(std::lround(v * 255.0)));
        }
    if (!out) throw std::runtime_error("image: write to " + path + " failed");
}

std::string matrix_text(const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("matrix_text: expected a rank-2 map");
    std::ostringstream out;
    out.precision(6);
    for (int i = 0; i < map.extent(0); ++i) {
        for (int j = 0; j < map.extent(1); ++j) {
            if (j) out << " ";
            out << map.at(i, j);
        }
        out << "\n";
    }
    return out.str();
}

} // namespace coordatt
