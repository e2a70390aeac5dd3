#include "wmu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace wmu {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
    void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<unsigned char> take() { return std::move(out_); }

private:
    void le(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) {
            out_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
        }
    }
    std::vector<unsigned char> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& in) : in_(in) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }
    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > in_.size()) {
            throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }
    std::uint64_t le(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= std::uint64_t{in_[pos_++]} << (8 * i);
        }
        return v;
    }
    const std::vector<unsigned char>& in_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<unsigned char> encode_checkpoint(const std::vector<NamedTensor>& tensors)
{
    Writer w;
    w.bytes("WMUC");
    w.u16(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) {
            throw ConfigError("tensor name too long for checkpoint: " + t.name.substr(0, 32) + "...");
        }
        w.u16(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name);
        w.u8(static_cast<std::uint8_t>(t.value.rank()));
        for (auto d : t.value.shape()) {
            w.u32(static_cast<std::uint32_t>(d));
        }
        for (float v : t.value.values()) {
            w.f32(v);
        }
    }
    return w.take();
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<unsigned char>& bytes)
{
    Reader r(bytes);
    if (r.bytes(4) != "WMUC") {
        throw DataError("not a WMUC checkpoint (bad magic)");
    }
    const auto version = r.u16();
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.u32();
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.bytes(r.u16());
        const int rank = r.u8();
        if (rank < 1 || rank > 4) {
            throw DataError("checkpoint tensor '" + t.name + "' has invalid rank " + std::to_string(rank));
        }
        Shape shape;
        for (int d = 0; d < rank; ++d) {
            shape.push_back(r.u32());
        }
        std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& v : data) {
            v = r.f32();
        }
        t.value = TensorF(std::move(shape), std::move(data));
        out.push_back(std::move(t));
    }
    if (!r.done()) {
        throw DataError("trailing bytes after checkpoint payload");
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors)
{
    const auto bytes = encode_checkpoint(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

} // namespace wmu
