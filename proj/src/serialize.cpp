#include "mixnorm/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mixnorm {

namespace {

constexpr char kMagic[4] = {'M', 'X', 'N', '1'};

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::vector<std::uint8_t> tensor_to_blob(const TensorF& t) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.rank() + 4 * t.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32_le(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u32_le(out, static_cast<std::uint32_t>(e));
  for (float v : t.values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32_le(out, bits);
  }
  return out;
}

TensorF tensor_from_blob(const std::vector<std::uint8_t>& blob) {
  if (blob.size() < 8 || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw std::runtime_error("tensor blob: bad magic");
  const std::uint32_t rank = get_u32_le(blob.data() + 4);
  if (blob.size() < 8 + 4 * static_cast<std::size_t>(rank))
    throw std::runtime_error("tensor blob: truncated header");
  std::vector<std::size_t> shape(rank);
  std::size_t count = rank == 0 ? 0 : 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_u32_le(blob.data() + 8 + 4 * i);
    count *= shape[i];
  }
  const std::size_t data_off = 8 + 4 * static_cast<std::size_t>(rank);
  if (blob.size() != data_off + 4 * count)
    throw std::runtime_error("tensor blob: size mismatch");
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32_le(blob.data() + data_off + 4 * i);
    std::memcpy(&data[i], &bits, 4);
  }
  return TensorF(std::move(shape), std::move(data));
}

void save_tensor(const TensorF& t, const std::filesystem::path& path) {
  const auto blob = tensor_to_blob(t);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_tensor: cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size()));
}

TensorF load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_tensor: cannot open " + path.string());
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  return tensor_from_blob(blob);
}

void tensor_to_csv(const TensorF& t, std::ostream& os) {
  if (t.rank() == 0 || t.size() == 0) return;
  const std::size_t rows = t.extent(0);
  const std::size_t cols = t.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) os << ',';
      os << format_float(t[r * cols + c]);
    }
    os << '\n';
  }
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  const std::size_t rem = bytes.size() - i;
  if (rem == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rem == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0)
    throw std::runtime_error("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        vals[j] = 0;
        ++pad;
      } else {
        vals[j] = value_of(c);
        if (vals[j] < 0 || pad > 0)
          throw std::runtime_error("base64: invalid character");
      }
    }
    const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("write_file_atomic: cannot open " + tmp);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw std::runtime_error("write_file_atomic: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mixnorm
