#include "babynet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace babynet {

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'B', 'N', 'T', '1'};
constexpr int kMaxRank = 8;
}  // namespace

void write_tensor_file(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(kMagic, 4);
    std::uint8_t dtype = 0;
    auto rank = static_cast<std::uint8_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d : t.shape()) {
        auto u = static_cast<std::uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&u), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!out) throw IoError("short write: " + path.string());
}

Tensor read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file: " + path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad magic bytes in tensor file: " + path.string());

    std::uint8_t dtype = 0, rank = 0;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (!in) throw IoError("truncated header in tensor file: " + path.string());
    if (dtype != 0) throw IoError("unsupported dtype code in tensor file: " + path.string());
    if (rank == 0 || rank > kMaxRank)
        throw IoError("invalid rank in tensor file: " + path.string());

    std::vector<int> shape(rank);
    for (int i = 0; i < rank; ++i) {
        std::uint32_t u = 0;
        in.read(reinterpret_cast<char*>(&u), 4);
        if (!in) throw IoError("truncated shape in tensor file: " + path.string());
        if (u == 0 || u > (1u << 30))
            throw IoError("invalid dimension in tensor file: " + path.string());
        shape[static_cast<std::size_t>(i)] = static_cast<int>(u);
    }

    int64_t n = shape_numel(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
        throw IoError("truncated payload in tensor file: " + path.string());
    char extra;
    if (in.read(&extra, 1))
        throw IoError("trailing bytes after payload in tensor file: " + path.string());
    return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace babynet
