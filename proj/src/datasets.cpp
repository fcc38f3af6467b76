#include "mmel/datasets.hpp"

#include "mmel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace mmel::cli {

using augment::ImagePayload;
using augment::Sample;
using augment::TextPayload;
using engine::Dataset;

namespace {

std::vector<uint8_t> read_all(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

} // namespace

Dataset load_cifar_binary(const std::string& path) {
    const auto bytes = read_all(path);
    constexpr size_t kRecord = 3073;
    if (bytes.empty() || bytes.size() % kRecord != 0) {
        throw std::runtime_error("cifar file '" + path + "': size " +
                                 std::to_string(bytes.size()) + " is not a multiple of 3073");
    }
    const std::string stem = std::filesystem::path(path).stem().string();
    Dataset ds;
    ds.num_classes = 10;
    const size_t n = bytes.size() / kRecord;
    ds.samples.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const uint8_t* rec = bytes.data() + i * kRecord;
        if (rec[0] > 9) {
            throw std::runtime_error("cifar file '" + path + "': label " +
                                     std::to_string(rec[0]) + " > 9 at record " +
                                     std::to_string(i));
        }
        ImagePayload img;
        img.channels = 3;
        img.height = 32;
        img.width = 32;
        img.data.resize(3072);
        for (size_t k = 0; k < 3072; ++k) {
            img.data[k] = static_cast<float>(rec[1 + k]) / 255.0f;
        }
        Sample s;
        s.id = "cifar:" + stem + ":" + std::to_string(i);
        s.payload = std::move(img);
        s.label = static_cast<int>(rec[0]);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

IdxArray load_idx(const std::string& path) {
    const auto bytes = read_all(path);
    auto be32 = [&](size_t off) -> uint32_t {
        if (off + 4 > bytes.size()) {
            throw std::runtime_error("idx file '" + path + "': truncated header");
        }
        return (static_cast<uint32_t>(bytes[off]) << 24) |
               (static_cast<uint32_t>(bytes[off + 1]) << 16) |
               (static_cast<uint32_t>(bytes[off + 2]) << 8) | static_cast<uint32_t>(bytes[off + 3]);
    };
    IdxArray arr;
    arr.magic = be32(0);
    size_t rank;
    if (arr.magic == 0x00000801) {
        rank = 1;
    } else if (arr.magic == 0x00000803) {
        rank = 3;
    } else {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "0x%08x", arr.magic);
        throw std::runtime_error("idx file '" + path + "': bad magic " + buf);
    }
    size_t total = 1;
    for (size_t d = 0; d < rank; ++d) {
        const uint32_t v = be32(4 + 4 * d);
        arr.dims.push_back(static_cast<int>(v));
        total *= v;
    }
    const size_t header = 4 + 4 * rank;
    if (bytes.size() != header + total) {
        throw std::runtime_error("idx file '" + path + "': expected " +
                                 std::to_string(header + total) + " bytes, got " +
                                 std::to_string(bytes.size()));
    }
    arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return arr;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
    IdxArray images = load_idx(images_path);
    IdxArray labels = load_idx(labels_path);
    if (images.magic != 0x00000803) {
        throw std::runtime_error("idx file '" + images_path + "' is not an image file");
    }
    if (labels.magic != 0x00000801) {
        throw std::runtime_error("idx file '" + labels_path + "' is not a label file");
    }
    if (images.dims[0] != labels.dims[0]) {
        throw std::runtime_error("idx pair: " + std::to_string(images.dims[0]) + " images vs " +
                                 std::to_string(labels.dims[0]) + " labels");
    }
    const int n = images.dims[0], h = images.dims[1], w = images.dims[2];
    const std::string stem = std::filesystem::path(images_path).stem().string();
    Dataset ds;
    int max_label = 0;
    ds.samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ImagePayload img;
        img.channels = 1;
        img.height = h;
        img.width = w;
        img.data.resize(static_cast<size_t>(h) * w);
        const uint8_t* src = images.data.data() + static_cast<size_t>(i) * h * w;
        for (size_t k = 0; k < img.data.size(); ++k) {
            img.data[k] = static_cast<float>(src[k]) / 255.0f;
        }
        Sample s;
        s.id = "idx:" + stem + ":" + std::to_string(i);
        s.payload = std::move(img);
        s.label = static_cast<int>(labels.data[static_cast<size_t>(i)]);
        max_label = std::max(max_label, static_cast<int>(labels.data[static_cast<size_t>(i)]));
        ds.samples.push_back(std::move(s));
    }
    ds.num_classes = max_label + 1;
    return ds;
}

Dataset make_blobs(int n, int classes, int dim, uint64_t seed) {
    if (n < 1 || classes < 1 || dim < 1) {
        throw std::invalid_argument("make_blobs: n, classes and dim must be positive");
    }
    // Class means on a ternary grid over {0.25, 0.5, 0.75}^dim.
    std::vector<std::vector<float>> means(static_cast<size_t>(classes),
                                          std::vector<float>(static_cast<size_t>(dim), 0.25f));
    for (int c = 0; c < classes; ++c) {
        int code = c;
        for (int d = 0; d < dim; ++d) {
            means[static_cast<size_t>(c)][static_cast<size_t>(d)] =
                0.25f + 0.25f * static_cast<float>(code % 3);
            code /= 3;
        }
    }
    constexpr double kSigma = 0.05;
    Dataset ds;
    ds.num_classes = classes;
    ds.samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        auto rng = RngStream::keyed({seed, 0x626c6f62ULL, static_cast<uint64_t>(i)});
        ImagePayload img;
        img.channels = 1;
        img.height = 1;
        img.width = dim;
        img.data.resize(static_cast<size_t>(dim));
        for (int d = 0; d < dim; ++d) {
            const double v = means[static_cast<size_t>(c)][static_cast<size_t>(d)] +
                             kSigma * rng.next_normal();
            img.data[static_cast<size_t>(d)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        Sample s;
        s.id = "blobs:" + std::to_string(seed) + ":" + std::to_string(i);
        s.payload = std::move(img);
        s.label = c;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Dataset make_synth_images(int n, int classes, uint64_t seed) {
    if (n < 1 || classes < 1) {
        throw std::invalid_argument("make_synth_images: n and classes must be positive");
    }
    constexpr int kSize = 32;
    constexpr double kTwoPi = 6.283185307179586;
    Dataset ds;
    ds.num_classes = classes;
    ds.samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        auto rng = RngStream::keyed({seed, 0x73796e7468ULL, static_cast<uint64_t>(i)});
        // Whole-template translation; crops can undo it, which is what
        // makes the augmentation informative.
        const double dy = static_cast<double>(rng.next_below(9)) - 4.0;
        const double dx = static_cast<double>(rng.next_below(9)) - 4.0;
        const double brightness = 0.12 * (rng.next_double() - 0.5);

        const double fx = 1.0 + static_cast<double>(c % 3);
        const double fy = 1.0 + static_cast<double>((c / 3) % 3);
        const double bump_cy = 8.0 + 6.0 * static_cast<double>(c % 3);
        const double bump_cx = 8.0 + 6.0 * static_cast<double>((c / 3) % 3);

        ImagePayload img;
        img.channels = 3;
        img.height = kSize;
        img.width = kSize;
        img.data.resize(3 * kSize * kSize);
        for (int ch = 0; ch < 3; ++ch) {
            const double phase = 0.9 * ch + 1.7 * c;
            float* plane = img.data.data() + static_cast<size_t>(ch) * kSize * kSize;
            for (int y = 0; y < kSize; ++y) {
                for (int x = 0; x < kSize; ++x) {
                    const double yy = y + dy, xx = x + dx;
                    double v = 0.5 + brightness;
                    v += 0.20 * std::sin(kTwoPi * (fx * xx + fy * yy) / kSize + phase);
                    const double r2 = (yy - bump_cy) * (yy - bump_cy) +
                                      (xx - bump_cx) * (xx - bump_cx);
                    v += (ch == c % 3 ? 0.25 : 0.10) * std::exp(-r2 / 18.0);
                    v += 0.12 * (rng.next_double() - 0.5);
                    plane[y * kSize + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
        Sample s;
        s.id = "synth:" + std::to_string(seed) + ":" + std::to_string(i);
        s.payload = std::move(img);
        s.label = c;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Dataset make_text_blobs(int n, int classes, int vocab, int seq_len, uint64_t seed) {
    if (n < 1 || classes < 1 || vocab < classes || seq_len < 1) {
        throw std::invalid_argument("make_text_blobs: bad dimensions");
    }
    Dataset ds;
    ds.num_classes = classes;
    ds.samples.reserve(static_cast<size_t>(n));
    const int per_class = vocab / classes;
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        auto rng = RngStream::keyed({seed, 0x74657874ULL, static_cast<uint64_t>(i)});
        TextPayload text;
        text.tokens.resize(static_cast<size_t>(seq_len));
        for (int t = 0; t < seq_len; ++t) {
            if (rng.next_double() < 0.7) {
                text.tokens[static_cast<size_t>(t)] =
                    c + classes * static_cast<int>(rng.next_below(
                                      static_cast<uint64_t>(std::max(per_class, 1))));
            } else {
                text.tokens[static_cast<size_t>(t)] =
                    static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab)));
            }
        }
        Sample s;
        s.id = "text:" + std::to_string(seed) + ":" + std::to_string(i);
        s.payload = std::move(text);
        s.label = c;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace mmel::cli
