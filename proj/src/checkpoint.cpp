#include "odvqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace odvqa {
namespace {

constexpr char kMagic[8] = {'O', 'D', 'V', 'Q', 'A', 'C', 'K', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(ckpt.header.size()));
    out.insert(out.end(), ckpt.header.begin(), ckpt.header.end());
    put_u32(out, static_cast<std::uint32_t>(ckpt.records.size()));
    for (const auto& r : ckpt.records) {
        if (numel(r.shape) != r.values.size()) throw std::invalid_argument("checkpoint: record " + r.name + " size mismatch");
        put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
        for (std::size_t e : r.shape) put_u32(out, static_cast<std::uint32_t>(e));
        for (float f : r.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    std::vector<std::uint8_t> rest(bytes.begin() + 8, bytes.end());
    Reader in(rest);
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.header = in.text(in.u32());
    const std::uint32_t count = in.u32();
    ckpt.records.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        CheckpointRecord r;
        r.name = in.text(in.u32());
        const std::uint32_t rank = in.u32();
        for (std::uint32_t a = 0; a < rank; ++a) r.shape.push_back(in.u32());
        r.values.resize(numel(r.shape));
        for (float& f : r.values) f = std::bit_cast<float>(in.u32());
        ckpt.records.push_back(std::move(r));
    }
    if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

template <typename T>
Checkpoint snapshot(const ParameterStore<T>& store, std::string header) {
    Checkpoint ckpt;
    ckpt.header = std::move(header);
    for (const auto& p : store.all()) {
        CheckpointRecord r{p.name, p.value.shape(), {}};
        r.values.assign(p.value.values().begin(), p.value.values().end());
        ckpt.records.push_back(std::move(r));
    }
    return ckpt;
}

template <typename T>
void restore(ParameterStore<T>& store, const Checkpoint& ckpt) {
    for (auto& p : store.all()) {
        const CheckpointRecord* r = ckpt.find(p.name);
        if (!r) throw std::runtime_error("checkpoint: missing record " + p.name);
        if (r->shape != p.value.shape())
            throw std::runtime_error("checkpoint: record " + p.name + " has shape " + to_string(r->shape) + ", model expects " +
                                     to_string(p.value.shape()));
        for (std::size_t i = 0; i < r->values.size(); ++i) p.value[i] = static_cast<T>(r->values[i]);
    }
}

template Checkpoint snapshot(const ParameterStore<float>&, std::string);
template Checkpoint snapshot(const ParameterStore<double>&, std::string);
template void restore(ParameterStore<float>&, const Checkpoint&);
template void restore(ParameterStore<double>&, const Checkpoint&);

}  // namespace odvqa
