#include "mmel/checkpoint.hpp"

#include "mmel/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mmel::diff {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'E', 'L', 'C', 'K', 'P', 'T'};
constexpr uint8_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v & 0xffffffffULL));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

class Reader {
public:
    Reader(std::string bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    void need(size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw std::runtime_error("checkpoint '" + path_ + "': truncated file");
        }
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(bytes_[pos_++]);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        const uint64_t lo = u32();
        return lo | (static_cast<uint64_t>(u32()) << 32);
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    const std::string& path() const { return path_; }

private:
    std::string bytes_;
    size_t pos_ = 0;
    std::string path_;
};

} // namespace

void save_checkpoint(const std::string& path, std::span<const TensorRecord> tensors,
                     CkptDtype dtype) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    out.push_back(static_cast<char>(kVersion));
    out.push_back(static_cast<char>(dtype));
    for (const auto& t : tensors) {
        if (numel(t.shape) != static_cast<int64_t>(t.values.size())) {
            throw std::invalid_argument("checkpoint: record shape " + shape_str(t.shape) +
                                        " does not hold " + std::to_string(t.values.size()) +
                                        " values");
        }
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        for (double v : t.values) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("checkpoint: refusing to write non-finite value");
            }
            if (dtype == CkptDtype::F64) {
                uint64_t bits;
                std::memcpy(&bits, &v, sizeof(bits));
                put_u64(out, bits);
            } else {
                const float f = static_cast<float>(v);
                uint32_t bits;
                std::memcpy(&bits, &f, sizeof(bits));
                put_u32(out, bits);
            }
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

std::vector<TensorRecord> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes), path);

    r.need(sizeof(kMagic));
    for (char expected : kMagic) {
        if (static_cast<char>(r.u8()) != expected) {
            throw std::runtime_error("checkpoint '" + path + "': bad magic");
        }
    }
    const uint8_t version = r.u8();
    if (version != kVersion) {
        throw std::runtime_error("checkpoint '" + path + "': unsupported version " +
                                 std::to_string(version));
    }
    const uint8_t dtype = r.u8();
    if (dtype > 1) {
        throw std::runtime_error("checkpoint '" + path + "': unknown dtype " +
                                 std::to_string(dtype));
    }

    std::vector<TensorRecord> records;
    while (!r.at_end()) {
        TensorRecord rec;
        const uint32_t rank = r.u32();
        if (rank > 8) {
            throw std::runtime_error("checkpoint '" + path + "': implausible rank " +
                                     std::to_string(rank));
        }
        rec.shape.resize(rank);
        for (uint32_t i = 0; i < rank; ++i) {
            const uint32_t d = r.u32();
            if (d == 0 || d > (1u << 28)) {
                throw std::runtime_error("checkpoint '" + path + "': bad extent " +
                                         std::to_string(d));
            }
            rec.shape[i] = static_cast<int>(d);
        }
        const int64_t n = numel(rec.shape);
        rec.values.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            if (dtype == 1) {
                const uint64_t bits = r.u64();
                double v;
                std::memcpy(&v, &bits, sizeof(v));
                rec.values[static_cast<size_t>(i)] = v;
            } else {
                const uint32_t bits = r.u32();
                float f;
                std::memcpy(&f, &bits, sizeof(f));
                rec.values[static_cast<size_t>(i)] = static_cast<double>(f);
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<TensorRecord> load_params(Model& model, const std::string& path) {
    auto records = load_checkpoint(path);
    auto& params = model.params();
    if (records.size() < params.size()) {
        throw std::runtime_error("checkpoint '" + path + "': holds " +
                                 std::to_string(records.size()) + " tensors, model needs " +
                                 std::to_string(params.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (records[i].shape != params[i].shape()) {
            throw std::runtime_error("checkpoint '" + path + "': tensor " + std::to_string(i) +
                                     " has shape " + shape_str(records[i].shape) +
                                     ", parameter expects " + shape_str(params[i].shape()));
        }
        auto dst = params[i].mutable_data();
        std::copy(records[i].values.begin(), records[i].values.end(), dst.begin());
    }
    return {records.begin() + static_cast<std::ptrdiff_t>(params.size()), records.end()};
}

std::vector<TensorRecord> snapshot_params(const Model& model) {
    std::vector<TensorRecord> out;
    out.reserve(model.params().size());
    for (const auto& p : model.params()) {
        out.push_back({p.shape(), std::vector<double>(p.data().begin(), p.data().end())});
    }
    return out;
}

} // namespace mmel::diff
