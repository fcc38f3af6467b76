#include "mmel/augment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace mmel::augment {

using nlohmann::json;

namespace {

// Stream tags so crop, flip and mask draws never share a stream.
constexpr uint64_t kCropTag = 0x63726f70; // "crop"
constexpr uint64_t kFlipTag = 0x666c6970; // "flip"
constexpr uint64_t kMaskTag = 0x6d61736b; // "mask"

const ImagePayload& as_image(const Sample& s) {
    if (!std::holds_alternative<ImagePayload>(s.payload)) {
        throw std::invalid_argument("sample '" + s.id + "' is not an image");
    }
    return std::get<ImagePayload>(s.payload);
}

} // namespace

void AugmentedGroup::validate() const {
    if (members.empty()) {
        throw std::invalid_argument("group '" + id + "': no members");
    }
    if (members.front().id != id) {
        throw std::invalid_argument("group '" + id + "': first member id '" + members.front().id +
                                    "' is not the original");
    }
    if (!member_targets.empty() && member_targets.size() != members.size()) {
        throw std::invalid_argument("group '" + id + "': " + std::to_string(member_targets.size()) +
                                    " targets for " + std::to_string(members.size()) + " members");
    }
    for (const auto& m : members) {
        if (const auto* img = std::get_if<ImagePayload>(&m.payload)) {
            if (img->data.size() != img->size()) {
                throw std::invalid_argument("group '" + id + "': image payload size mismatch");
            }
            for (float v : img->data) {
                if (!(v >= 0.0f && v <= 1.0f)) {
                    throw std::invalid_argument("group '" + id + "': image value outside [0,1]");
                }
            }
        } else {
            for (int t : std::get<TextPayload>(m.payload).tokens) {
                if (t < 0) {
                    throw std::invalid_argument("group '" + id + "': negative token index");
                }
            }
        }
    }
}

// --- unigram predictor -------------------------------------------------------

UnigramPredictor::UnigramPredictor(std::span<const std::vector<int>> corpus, int vocab)
    : vocab_(vocab) {
    if (vocab <= 0) throw std::invalid_argument("UnigramPredictor: vocab must be positive");
    std::vector<int64_t> counts(static_cast<size_t>(vocab), 0);
    for (const auto& seq : corpus) {
        for (int t : seq) {
            if (t < 0 || t >= vocab) {
                throw std::invalid_argument("UnigramPredictor: token " + std::to_string(t) +
                                            " outside vocab of " + std::to_string(vocab));
            }
            ++counts[static_cast<size_t>(t)];
        }
    }
    by_frequency_.resize(static_cast<size_t>(vocab));
    std::iota(by_frequency_.begin(), by_frequency_.end(), 0);
    std::stable_sort(by_frequency_.begin(), by_frequency_.end(), [&](int a, int b) {
        return counts[static_cast<size_t>(a)] > counts[static_cast<size_t>(b)];
    });
}

std::vector<int> UnigramPredictor::rank(const std::vector<int>& context,
                                        size_t masked_pos) const {
    if (masked_pos >= context.size()) {
        throw std::out_of_range("UnigramPredictor: masked position outside the sequence");
    }
    std::vector<int> ranking = by_frequency_;
    const int original = context[masked_pos];
    if (ranking.size() > 1 && ranking[0] == original) {
        std::swap(ranking[0], ranking[1]);
    }
    return ranking;
}

// --- image transforms --------------------------------------------------------

ImagePayload pad_crop(const ImagePayload& image, int pad, RngStream& rng) {
    if (pad < 0) throw std::invalid_argument("pad_crop: pad must be nonnegative");
    const auto dy = static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * pad + 1)));
    const auto dx = static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * pad + 1)));
    if (pad == 0) return image;

    ImagePayload out = image;
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    // out(y, x) = padded(y + dy, x + dx) = in(y + dy - pad, x + dx - pad)
    const int oy = dy - pad, ox = dx - pad;
    const int y0 = std::max(0, -oy), y1 = image.height - std::max(0, oy);
    const int x0 = std::max(0, -ox), x1 = image.width - std::max(0, ox);
    for (int c = 0; c < image.channels; ++c) {
        const float* in = image.data.data() + c * image.plane();
        float* dst = out.data.data() + c * image.plane();
        for (int y = y0; y < y1; ++y) {
            const float* in_row = in + static_cast<size_t>(y + oy) * image.width + ox;
            float* out_row = dst + static_cast<size_t>(y) * image.width;
            for (int x = x0; x < x1; ++x) out_row[x] = in_row[x];
        }
    }
    return out;
}

ImagePayload hflip(const ImagePayload& image, RngStream& rng, double p) {
    if (rng.next_double() >= p) return image;
    ImagePayload out = image;
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            const float* in_row =
                image.data.data() + c * image.plane() + static_cast<size_t>(y) * image.width;
            float* out_row =
                out.data.data() + c * image.plane() + static_cast<size_t>(y) * image.width;
            for (int x = 0; x < image.width; ++x) out_row[x] = in_row[image.width - 1 - x];
        }
    }
    return out;
}

AugmentedGroup build_image_group(const Sample& sample, int n_aug, const ImageAugmentOptions& opt,
                                 uint64_t seed) {
    if (n_aug < 0) throw std::invalid_argument("build_image_group: n_aug must be nonnegative");
    const ImagePayload& base = as_image(sample);
    const uint64_t id_key = fnv1a64(sample.id);

    AugmentedGroup group;
    group.id = sample.id;
    group.members.reserve(static_cast<size_t>(n_aug) + 1);
    group.member_targets.reserve(static_cast<size_t>(n_aug) + 1);
    group.members.push_back(sample);
    group.member_targets.push_back(sample.label);
    for (int i = 1; i <= n_aug; ++i) {
        auto crop_rng = RngStream::keyed({seed, id_key, static_cast<uint64_t>(i), kCropTag});
        auto flip_rng = RngStream::keyed({seed, id_key, static_cast<uint64_t>(i), kFlipTag});
        ImagePayload img = pad_crop(base, opt.pad, crop_rng);
        img = hflip(img, flip_rng, opt.flip_p);
        Sample member;
        member.id = sample.id + "#" + std::to_string(i);
        member.payload = std::move(img);
        member.label = sample.label;
        group.members.push_back(std::move(member));
        group.member_targets.push_back(sample.label);
    }
    return group;
}

// --- text augmentation -------------------------------------------------------

std::vector<std::vector<int>> greedy_text_augment(const std::vector<int>& tokens,
                                                  double mask_ratio, int n_aug,
                                                  const TokenPredictor& predictor, uint64_t seed) {
    if (tokens.empty()) throw std::invalid_argument("greedy_text_augment: empty sequence");
    if (!(mask_ratio > 0.0) || mask_ratio > 1.0) {
        throw std::invalid_argument("greedy_text_augment: mask_ratio must lie in (0, 1]");
    }
    if (n_aug < 0) throw std::invalid_argument("greedy_text_augment: n_aug must be nonnegative");

    const auto len = tokens.size();
    const size_t k = std::min(
        len, static_cast<size_t>(std::max<int64_t>(
                 1, std::llround(mask_ratio * static_cast<double>(len)))));

    // Sample k distinct positions; the first drawn is the ranked slot,
    // the rest are filled greedily left to right.
    auto rng = RngStream::keyed({seed, kMaskTag});
    std::vector<size_t> pool(len);
    std::iota(pool.begin(), pool.end(), size_t{0});
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + rng.next_below(len - i);
        std::swap(pool[i], pool[j]);
    }
    const size_t p1 = pool[0];
    std::vector<size_t> rest(pool.begin() + 1, pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(rest.begin(), rest.end());

    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(n_aug));
    for (int i = 1; i <= n_aug; ++i) {
        std::vector<int> z = tokens;
        for (size_t p : rest) z[p] = kMaskedToken;

        std::vector<int> ranking = predictor.rank(z, p1);
        if (static_cast<size_t>(n_aug) > ranking.size()) {
            throw std::runtime_error("greedy_text_augment: predictor ranks " +
                                     std::to_string(ranking.size()) + " tokens, need " +
                                     std::to_string(n_aug));
        }
        z[p1] = ranking[static_cast<size_t>(i - 1)];

        for (size_t p : rest) {
            z[p] = tokens[p]; // expose the replaced token to the predictor
            std::vector<int> r = predictor.rank(z, p);
            if (r.empty()) throw std::runtime_error("greedy_text_augment: empty ranking");
            z[p] = r[0];
        }
        out.push_back(std::move(z));
    }
    return out;
}

AugmentedGroup build_text_group(const Sample& sample, int n_aug, double mask_ratio,
                                const TokenPredictor& predictor, uint64_t seed) {
    if (!std::holds_alternative<TextPayload>(sample.payload)) {
        throw std::invalid_argument("sample '" + sample.id + "' is not a token sequence");
    }
    const auto& tokens = std::get<TextPayload>(sample.payload).tokens;
    auto variants =
        greedy_text_augment(tokens, mask_ratio, n_aug, predictor, seed ^ fnv1a64(sample.id));

    AugmentedGroup group;
    group.id = sample.id;
    group.members.push_back(sample);
    group.member_targets.push_back(sample.label);
    for (size_t i = 0; i < variants.size(); ++i) {
        Sample member;
        member.id = sample.id + "#" + std::to_string(i + 1);
        member.payload = TextPayload{std::move(variants[i])};
        member.label = sample.label;
        group.members.push_back(std::move(member));
        group.member_targets.push_back(sample.label);
    }
    return group;
}

// --- JSON-lines serialization -----------------------------------------------

namespace {

json payload_to_json(const Payload& p) {
    if (const auto* img = std::get_if<ImagePayload>(&p)) {
        json j;
        j["shape"] = {img->channels, img->height, img->width};
        j["data"] = img->data;
        return j;
    }
    json j;
    j["tokens"] = std::get<TextPayload>(p).tokens;
    return j;
}

Payload payload_from_json(const json& j, bool is_image) {
    if (is_image) {
        const auto& shape = j.at("shape");
        if (!shape.is_array() || shape.size() != 3) {
            throw std::invalid_argument("image payload needs shape [C,H,W]");
        }
        ImagePayload img;
        img.channels = shape[0].get<int>();
        img.height = shape[1].get<int>();
        img.width = shape[2].get<int>();
        img.data = j.at("data").get<std::vector<float>>();
        if (img.data.size() != img.size()) {
            throw std::invalid_argument("image payload data does not match its shape");
        }
        return img;
    }
    return TextPayload{j.at("tokens").get<std::vector<int>>()};
}

json label_to_json(const Label& label) {
    if (const auto* c = std::get_if<int>(&label)) return *c;
    if (const auto* r = std::get_if<double>(&label)) return *r;
    return std::get<std::vector<double>>(label);
}

Label label_from_json(const json& j) {
    if (j.is_number_integer()) return j.get<int>();
    if (j.is_number_float()) return j.get<double>();
    if (j.is_array()) return j.get<std::vector<double>>();
    throw std::invalid_argument("label must be an integer, a real, or a distribution");
}

bool payload_equal(const Payload& a, const Payload& b) {
    if (const auto* ia = std::get_if<ImagePayload>(&a)) {
        const auto* ib = std::get_if<ImagePayload>(&b);
        return ib && ia->channels == ib->channels && ia->height == ib->height &&
               ia->width == ib->width && ia->data == ib->data;
    }
    const auto* tb = std::get_if<TextPayload>(&b);
    return tb && std::get<TextPayload>(a).tokens == tb->tokens;
}

} // namespace

void save_offline_groups(const std::string& path, std::span<const AugmentedGroup> groups) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& g : groups) {
        g.validate();
        json line;
        line["id"] = g.id;
        line["kind"] = std::holds_alternative<ImagePayload>(g.original().payload) ? "image" : "text";
        line["original"] = payload_to_json(g.original().payload);
        line["label"] = label_to_json(g.original().label);
        json members = json::array();
        for (const auto& m : g.members) members.push_back(payload_to_json(m.payload));
        line["members"] = std::move(members);
        if (g.member_targets.empty()) {
            line["member_targets"] = nullptr;
        } else {
            json targets = json::array();
            for (const auto& t : g.member_targets) targets.push_back(label_to_json(t));
            line["member_targets"] = std::move(targets);
        }
        os << line.dump() << "\n";
    }
    if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<AugmentedGroup> load_offline_groups(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open group file '" + path + "'");
    std::vector<AugmentedGroup> groups;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("group file '" + path + "' line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        try {
            AugmentedGroup g;
            g.id = j.at("id").get<std::string>();
            const bool is_image = j.at("kind").get<std::string>() == "image";
            const Label label = label_from_json(j.at("label"));
            const Payload original = payload_from_json(j.at("original"), is_image);

            const auto& members = j.at("members");
            if (!members.is_array() || members.empty()) {
                throw std::invalid_argument("group '" + g.id + "': members must be nonempty");
            }
            for (size_t i = 0; i < members.size(); ++i) {
                Sample m;
                m.id = i == 0 ? g.id : g.id + "#" + std::to_string(i);
                m.payload = payload_from_json(members[i], is_image);
                m.label = label;
                g.members.push_back(std::move(m));
            }
            if (!payload_equal(g.members.front().payload, original)) {
                throw std::invalid_argument("group '" + g.id +
                                            "': first member differs from the original payload");
            }
            if (j.contains("member_targets") && !j.at("member_targets").is_null()) {
                for (const auto& t : j.at("member_targets")) {
                    g.member_targets.push_back(label_from_json(t));
                }
            } else {
                g.member_targets.assign(g.members.size(), label);
            }
            g.validate();
            groups.push_back(std::move(g));
        } catch (const json::exception& e) {
            throw std::runtime_error("group file '" + path + "' line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
    }
    return groups;
}

} // namespace mmel::augment
