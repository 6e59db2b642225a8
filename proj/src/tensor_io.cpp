#include "bamnet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace bamnet {
namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr char kPackMagic[8] = {'T', 'N', 'S', 'R', 'P', 'A', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kMaxRank = 16;

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, bytes);
}

std::uint64_t get_le(std::istream& in, int bytes, const char* what) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), bytes)) {
        throw FormatError(std::string("unexpected end of stream reading ") + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

template <typename T>
void write_payload(std::ostream& out, const Tensor<T>& t) {
    for (T x : t.data()) {
        if constexpr (std::is_same_v<T, float>) {
            put_le(out, std::bit_cast<std::uint32_t>(x), 4);
        } else if constexpr (std::is_same_v<T, double>) {
            put_le(out, std::bit_cast<std::uint64_t>(x), 8);
        } else {
            put_le(out, x, 1);
        }
    }
}

template <typename T>
Tensor<T> read_payload(std::istream& in, Shape shape) {
    const std::size_t n = shape_numel(shape);
    std::vector<T> data(n);
    constexpr std::size_t width = sizeof(T);
    std::vector<unsigned char> raw(n * width);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw FormatError("unexpected end of stream reading tensor payload");
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t v = 0;
        for (std::size_t b = 0; b < width; ++b) v |= static_cast<std::uint64_t>(raw[i * width + b]) << (8 * b);
        if constexpr (std::is_same_v<T, float>) {
            data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(v));
        } else if constexpr (std::is_same_v<T, double>) {
            data[i] = std::bit_cast<double>(v);
        } else {
            data[i] = static_cast<T>(v);
        }
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

DType dtype_of(const AnyTensor& t) {
    return std::visit([](const auto& x) { return x.dtype(); }, t);
}

const Shape& shape_of(const AnyTensor& t) {
    return std::visit([](const auto& x) -> const Shape& { return x.shape(); }, t);
}

void write_tensor(std::ostream& out, const AnyTensor& tensor) {
    const Shape& shape = shape_of(tensor);
    if (shape.empty() || shape.size() > kMaxRank) throw FormatError("cannot serialize tensor of rank " + std::to_string(shape.size()));
    out.write(kMagic, 4);
    put_le(out, kVersion, 1);
    put_le(out, static_cast<std::uint8_t>(dtype_of(tensor)), 1);
    put_le(out, shape.size(), 1);
    for (auto e : shape) put_le(out, e, 8);
    std::visit([&](const auto& t) { write_payload(out, t); }, tensor);
}

AnyTensor read_tensor(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad TNSR magic");
    const auto version = get_le(in, 1, "version");
    if (version != kVersion) throw FormatError("unsupported TNSR version " + std::to_string(version));
    const auto code = get_le(in, 1, "dtype");
    const auto rank = get_le(in, 1, "rank");
    if (rank == 0 || rank > kMaxRank) throw FormatError("invalid TNSR rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        e = get_le(in, 8, "extent");
        if (e == 0) throw FormatError("TNSR extent of zero");
    }
    switch (code) {
        case 0: return read_payload<float>(in, std::move(shape));
        case 1: return read_payload<double>(in, std::move(shape));
        case 2: return read_payload<std::uint8_t>(in, std::move(shape));
        default: throw FormatError("unknown TNSR dtype code " + std::to_string(code));
    }
}

std::string encode_tensor(const AnyTensor& tensor) {
    std::ostringstream out(std::ios::binary);
    write_tensor(out, tensor);
    return std::move(out).str();
}

AnyTensor decode_tensor(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    auto t = read_tensor(in);
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after TNSR record");
    return t;
}

void save_tensor(const std::filesystem::path& path, const AnyTensor& tensor) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    write_tensor(out, tensor);
    if (!out) throw FormatError("write failed for " + path.string());
}

AnyTensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_tensor(in);
}

void save_container(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::vector<std::string> records;
    records.reserve(tensors.size());
    for (const auto& [name, t] : tensors) records.push_back(encode_tensor(t));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(kPackMagic, 8);
    put_le(out, kVersion, 1);
    put_le(out, tensors.size(), 4);
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& name = tensors[i].first;
        if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name);
        put_le(out, name.size(), 2);
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le(out, offset, 8);
        put_le(out, records[i].size(), 8);
        offset += records[i].size();
    }
    for (const auto& r : records) out.write(r.data(), static_cast<std::streamsize>(r.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

NamedTensors load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kPackMagic, 8) != 0) {
        throw FormatError(path.string() + ": bad container magic");
    }
    if (get_le(in, 1, "version") != kVersion) throw FormatError(path.string() + ": unsupported container version");
    const auto count = get_le(in, 4, "count");
    struct IndexEntry {
        std::string name;
        std::uint64_t offset;
        std::uint64_t size;
    };
    std::vector<IndexEntry> index(count);
    for (auto& e : index) {
        const auto len = get_le(in, 2, "name length");
        e.name.resize(len);
        if (!in.read(e.name.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated container index");
        e.offset = get_le(in, 8, "offset");
        e.size = get_le(in, 8, "size");
    }
    const auto base = in.tellg();
    NamedTensors out;
    out.reserve(count);
    for (const auto& e : index) {
        in.seekg(base + static_cast<std::streamoff>(e.offset));
        std::string bytes(e.size, '\0');
        if (!in.read(bytes.data(), static_cast<std::streamsize>(e.size))) {
            throw FormatError(path.string() + ": truncated record '" + e.name + "'");
        }
        out.emplace_back(e.name, decode_tensor(bytes));
    }
    return out;
}

}  // namespace bamnet
