#include "fgfa/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace fgfa {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'T', '1'};
constexpr std::uint8_t kDtypeFloat32 = 0;

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

static_assert(std::endian::native == std::endian::little,
              "fgt serialization assumes a little-endian host");

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::string header;
  header.append(kMagic, 4);
  header.push_back(static_cast<char>(kDtypeFloat32));
  header.push_back(static_cast<char>(t.rank()));
  for (int d : t.dims()) put_u32_le(header, static_cast<std::uint32_t>(d));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_tensor: cannot open " + path.string());
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!f) throw IoError("write_tensor: write failed for " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_tensor: cannot open " + path.string());
  std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  const std::size_t n = raw.size();

  if (n < 6) throw IoError("read_tensor: truncated header in " + path.string());
  if (std::memcmp(p, kMagic, 4) != 0)
    throw IoError("read_tensor: bad magic in " + path.string());
  if (p[4] != kDtypeFloat32)
    throw IoError("read_tensor: unsupported dtype code " + std::to_string(p[4]) +
                  " in " + path.string());
  const int rank = p[5];
  if (rank < 1 || rank > 4)
    throw IoError("read_tensor: invalid rank " + std::to_string(rank) + " in " +
                  path.string());
  const std::size_t dims_bytes = static_cast<std::size_t>(rank) * 4;
  if (n < 6 + dims_bytes)
    throw IoError("read_tensor: truncated dims in " + path.string());

  std::vector<int> dims(static_cast<std::size_t>(rank));
  std::size_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32_le(p + 6 + static_cast<std::size_t>(i) * 4);
    if (d == 0 || d > (1u << 24))
      throw IoError("read_tensor: implausible extent " + std::to_string(d) + " in " +
                    path.string());
    dims[static_cast<std::size_t>(i)] = static_cast<int>(d);
    count *= d;
  }

  const std::size_t payload = n - 6 - dims_bytes;
  if (payload < count * sizeof(float))
    throw IoError("read_tensor: truncated payload in " + path.string());
  if (payload > count * sizeof(float))
    throw IoError("read_tensor: trailing bytes after payload in " + path.string());

  std::vector<float> values(count);
  std::memcpy(values.data(), p + 6 + dims_bytes, count * sizeof(float));
  return Tensor(std::move(dims), std::move(values));
}

}  // namespace fgfa
