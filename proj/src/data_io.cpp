/*
 * Copyright 2026 The srwm-acl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srwm/tasks.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <iterator>

namespace srwm {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::filesystem::path& path) {
    if (off + 4 > buf.size()) throw FormatError(path.string() + ": truncated IDX header");
    return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
           (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       const std::optional<FeatureStats>& stats) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);

    if (read_be32(img, 0, images) != kIdxImages) throw FormatError(images.string() + ": bad IDX image magic");
    if (read_be32(lab, 0, labels) != kIdxLabels) throw FormatError(labels.string() + ": bad IDX label magic");
    const std::size_t n = read_be32(img, 4, images);
    const std::size_t rows = read_be32(img, 8, images);
    const std::size_t cols = read_be32(img, 12, images);
    const std::size_t n_labels = read_be32(lab, 4, labels);
    if (rows == 0 || cols == 0) throw FormatError(images.string() + ": zero image extent");
    if (n != n_labels)
        throw FormatError("image count " + std::to_string(n) + " does not match label count " +
                          std::to_string(n_labels));
    const std::size_t dim = rows * cols;
    if (img.size() < 16 + n * dim) throw FormatError(images.string() + ": truncated image data");
    if (lab.size() < 8 + n) throw FormatError(labels.string() + ": truncated label data");

    Dataset ds(dim, 1);
    std::vector<Real> x(dim);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* p = img.data() + 16 + i * dim;
        for (std::size_t j = 0; j < dim; ++j) x[j] = static_cast<Real>(p[j]) / Real(255);
        ds.add(x, lab[8 + i]);
    }
    ds.normalize(stats ? *stats : ds.compute_stats());
    return ds;
}

namespace {

struct Image {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<Real> pixels;  // interleaved, [0,1]
};

Image decode_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw FormatError(path.string() + ": " + image.message);
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError(path.string() + ": " + image.message);
    }
    Image out{image.width, image.height, gray ? 1u : 3u, {}};
    out.pixels.reserve(buf.size());
    for (png_byte b : buf) out.pixels.push_back(static_cast<Real>(b) / Real(255));
    return out;
}

// Binary netpbm (P5 grayscale, P6 RGB) with maxval <= 255.
Image decode_netpbm(const std::filesystem::path& path) {
    const auto data = read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(data[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < data.size() && !std::isspace(data[pos])) t += static_cast<char>(data[pos++]);
        if (t.empty()) throw FormatError(path.string() + ": truncated netpbm header");
        return t;
    };
    const std::string magic = token();
    if (magic != "P5" && magic != "P6") throw FormatError(path.string() + ": unsupported netpbm type " + magic);
    Image out;
    try {
        out.width = std::stoul(token());
        out.height = std::stoul(token());
        const unsigned long maxval = std::stoul(token());
        if (maxval == 0 || maxval > 255) throw FormatError(path.string() + ": unsupported maxval");
        out.channels = magic == "P5" ? 1 : 3;
        ++pos;
        const std::size_t n = out.width * out.height * out.channels;
        if (data.size() < pos + n) throw FormatError(path.string() + ": truncated pixel data");
        out.pixels.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            out.pixels.push_back(static_cast<Real>(data[pos + i]) / static_cast<Real>(maxval));
    } catch (const std::invalid_argument&) {
        throw FormatError(path.string() + ": malformed netpbm header");
    }
    return out;
}

// Bilinear resampling to size x size, output channel-major with 3 channels.
std::vector<Real> resize_rgb(const Image& img, std::size_t size) {
    std::vector<Real> out(3 * size * size);
    const double sx = static_cast<double>(img.width) / static_cast<double>(size);
    const double sy = static_cast<double>(img.height) / static_cast<double>(size);
    auto px = [&](std::size_t x, std::size_t y, std::size_t c) {
        return static_cast<double>(img.pixels[(y * img.width + x) * img.channels + (img.channels == 1 ? 0 : c)]);
    };
    for (std::size_t y = 0; y < size; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = px(x0, y0, c) * (1 - wx) + px(x1, y0, c) * wx;
                const double bot = px(x0, y1, c) * (1 - wx) + px(x1, y1, c) * wx;
                out[c * size * size + y * size + x] = static_cast<Real>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

}  // namespace

Dataset load_image_dir(const std::filesystem::path& root, std::size_t size, const std::optional<FeatureStats>& stats) {
    namespace fs = std::filesystem;
    if (size == 0) throw ConfigError("image size must be positive");
    if (!fs::is_directory(root)) throw IoError(root.string() + " is not a directory");
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw FormatError(root.string() + " contains no class directories");

    Dataset ds(3 * size * size, 3);
    for (std::size_t cls = 0; cls < class_dirs.size(); ++cls) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[cls])) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
            if (ext == ".png" || ext == ".pgm" || ext == ".ppm") files.push_back(entry.path());
        }
        if (files.empty()) throw FormatError("class directory " + class_dirs[cls].string() + " has no images");
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const Image img = f.extension() == ".png" || f.extension() == ".PNG" ? decode_png(f) : decode_netpbm(f);
            if (img.width == 0 || img.height == 0) throw FormatError(f.string() + ": empty image");
            ds.add(resize_rgb(img, size), static_cast<int>(cls));
        }
    }
    ds.normalize(stats ? *stats : ds.compute_stats());
    return ds;
}

}  // namespace srwm
