#include "efft/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace efft {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError("idx: truncated file while reading " + what);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace

Tensor grating_template(const SyntheticSpec& spec, int cls) {
    if (cls < 0 || cls >= spec.n_classes) throw ContractError("grating_template: class out of range");
    // Classes differ in orientation and cycle count so that neighbouring
    // orientations stay distinguishable at patch scale.
    const double theta = std::numbers::pi * cls / spec.n_classes;
    const double freq = 1.0 + cls % 3;
    const double cs = std::cos(theta), sn = std::sin(theta);
    Tensor img({spec.image, spec.image});
    for (int y = 0; y < spec.image; ++y)
        for (int x = 0; x < spec.image; ++x) {
            const double t = (x * cs + y * sn) / spec.image;
            img(y, x) = 0.5 + 0.45 * std::sin(2.0 * std::numbers::pi * freq * t);
        }
    return img;
}

Dataset gen_synthetic(const SyntheticSpec& spec, Rng& rng) {
    if (spec.n_classes < 2 || spec.samples_per_class < 1 || spec.image < 2)
        throw ContractError("gen_synthetic: invalid spec");
    if (spec.noise_std < 0) throw ContractError("gen_synthetic: negative noise");
    Dataset data;
    data.image_h = data.image_w = spec.image;
    data.channels = 1;
    data.n_classes = spec.n_classes;
    for (int cls = 0; cls < spec.n_classes; ++cls) {
        const Tensor tmpl = grating_template(spec, cls);
        for (int k = 0; k < spec.samples_per_class; ++k) {
            Tensor img = tmpl;
            if (spec.noise_std > 0)
                for (std::size_t i = 0; i < img.size(); ++i)
                    img[i] = std::clamp(img[i] + spec.noise_std * rng.next_normal(), 0.0, 1.0);
            data.images.push_back(std::move(img));
            data.labels.push_back(cls);
        }
    }
    return data;
}

Dataset load_idx(const std::string& image_path, const std::string& label_path, int max_samples) {
    std::ifstream img_in(image_path, std::ios::binary);
    if (!img_in) throw IoError("idx: cannot open " + image_path);
    if (read_u32_be(img_in, "image magic") != kImageMagic)
        throw IoError("idx: bad image magic in " + image_path);
    const std::uint32_t n_images = read_u32_be(img_in, "image count");
    const std::uint32_t rows = read_u32_be(img_in, "rows");
    const std::uint32_t cols = read_u32_be(img_in, "cols");

    std::ifstream lab_in(label_path, std::ios::binary);
    if (!lab_in) throw IoError("idx: cannot open " + label_path);
    if (read_u32_be(lab_in, "label magic") != kLabelMagic)
        throw IoError("idx: bad label magic in " + label_path);
    const std::uint32_t n_labels = read_u32_be(lab_in, "label count");
    if (n_images != n_labels)
        throw IoError("idx: image count " + std::to_string(n_images) + " != label count " +
                      std::to_string(n_labels));

    std::uint32_t take = n_images;
    if (max_samples > 0) take = std::min(take, static_cast<std::uint32_t>(max_samples));
    if (take == 0) throw IoError("idx: no samples");

    Dataset data;
    data.image_h = static_cast<int>(rows);
    data.image_w = static_cast<int>(cols);
    data.channels = 1;
    std::vector<unsigned char> pixel_row(static_cast<std::size_t>(rows) * cols);
    int max_label = 0;
    for (std::uint32_t i = 0; i < take; ++i) {
        if (!img_in.read(reinterpret_cast<char*>(pixel_row.data()),
                         static_cast<std::streamsize>(pixel_row.size())))
            throw IoError("idx: truncated image data in " + image_path);
        Tensor img({static_cast<int>(rows), static_cast<int>(cols)});
        for (std::size_t p = 0; p < pixel_row.size(); ++p) img[p] = pixel_row[p] / 255.0;
        data.images.push_back(std::move(img));
        unsigned char lab;
        if (!lab_in.read(reinterpret_cast<char*>(&lab), 1))
            throw IoError("idx: truncated label data in " + label_path);
        data.labels.push_back(lab);
        max_label = std::max(max_label, static_cast<int>(lab));
    }
    data.n_classes = max_label + 1;
    return data;
}

void save_idx(const Dataset& data, const std::string& image_path, const std::string& label_path) {
    if (data.channels != 1) throw ContractError("save_idx: single-channel images only");
    std::ofstream img_out(image_path, std::ios::binary);
    if (!img_out) throw IoError("idx: cannot write " + image_path);
    write_u32_be(img_out, kImageMagic);
    write_u32_be(img_out, static_cast<std::uint32_t>(data.images.size()));
    write_u32_be(img_out, static_cast<std::uint32_t>(data.image_h));
    write_u32_be(img_out, static_cast<std::uint32_t>(data.image_w));
    for (const Tensor& img : data.images) {
        for (std::size_t p = 0; p < img.size(); ++p) {
            const double v = std::clamp(img[p], 0.0, 1.0);
            const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
            img_out.write(reinterpret_cast<const char*>(&byte), 1);
        }
    }
    std::ofstream lab_out(label_path, std::ios::binary);
    if (!lab_out) throw IoError("idx: cannot write " + label_path);
    write_u32_be(lab_out, kLabelMagic);
    write_u32_be(lab_out, static_cast<std::uint32_t>(data.labels.size()));
    for (int lab : data.labels) {
        const unsigned char byte = static_cast<unsigned char>(lab);
        lab_out.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

} // namespace efft
