#include "afloc/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace afloc::nn {

namespace {

constexpr char kMagic[8] = {'A', 'F', 'L', 'O', 'C', 'C', 'K', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::FormatError, "checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::int64_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != static_cast<std::int64_t>(t.values.size()))
      fail(ErrorCode::ShapeMismatch, "tensor " + t.name + " value count does not match shape");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.string(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    fail(ErrorCode::FormatError, "not a checkpoint container");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion)
    fail(ErrorCode::FormatError, "unsupported checkpoint version " + std::to_string(version));
  const auto count = r.uint(4);
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.string(r.uint(4));
    const auto rank = r.uint(4);
    std::uint64_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<std::int64_t>(r.uint(8)));
      n *= static_cast<std::uint64_t>(t.shape.back());
    }
    if (n > bytes.size()) fail(ErrorCode::FormatError, "checkpoint tensor larger than file");
    t.values.resize(n);
    for (auto& v : t.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    out.push_back(std::move(t));
  }
  if (!r.done()) fail(ErrorCode::FormatError, "trailing bytes after checkpoint");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  fail(ErrorCode::FormatError, "checkpoint has no tensor named " + name);
}

}  // namespace afloc::nn
